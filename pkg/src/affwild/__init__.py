"""Time-continuous dimensional affect toolkit: annotation capture and
post-processing, CCC/MSE evaluation, quadrant-balanced data augmentation, and
an end-to-end CNN-GRU valence/arousal regressor with a CCC-based loss."""

__version__ = "0.1.0"
