"""Configurable CNN -> FC1 (landmark fused) -> GRU stack -> output head.

The default desk-scale instance uses two small conv blocks on 32x32 inputs,
a 64-unit fused FC layer, a 2-layer GRU of 32 units and a linear 2-output
regression head.  Larger backbone configurations (VGG-style stacks, deeper FC
layers) remain expressible through :class:`ModelConfig`.  A categorical
variant replaces the regression head with a 7-class softmax head; all other
parameters are preserved bit-exactly by :func:`swap_head`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointError, load_archive, save_archive
from .tensor import Tensor

REGRESSION_HEAD = "regression-2"
CATEGORICAL_HEAD = "categorical-7"
NUM_CLASSES = 7


class ConfigError(ValueError):
    """Raised when a model configuration is internally inconsistent."""


@dataclass(frozen=True)
class Conv:
    kh: int
    kw: int
    cin: int
    cout: int
    stride: int = 1
    padding: str = "same"


@dataclass(frozen=True)
class Pool:
    k: int
    stride: int
    padding: str = "valid"


@dataclass(frozen=True)
class Relu:
    pass


def _layer_to_dict(layer):
    if isinstance(layer, Conv):
        return {"kind": "conv", "kh": layer.kh, "kw": layer.kw, "cin": layer.cin,
                "cout": layer.cout, "stride": layer.stride, "padding": layer.padding}
    if isinstance(layer, Pool):
        return {"kind": "pool", "k": layer.k, "stride": layer.stride, "padding": layer.padding}
    if isinstance(layer, Relu):
        return {"kind": "relu"}
    raise ConfigError(f"unknown backbone layer {layer!r}")


def _layer_from_dict(d):
    kind = d.get("kind")
    if kind == "conv":
        return Conv(d["kh"], d["kw"], d["cin"], d["cout"], d["stride"], d["padding"])
    if kind == "pool":
        return Pool(d["k"], d["stride"], d["padding"])
    if kind == "relu":
        return Relu()
    raise ConfigError(f"unknown backbone layer kind {kind!r}")


@dataclass(frozen=True)
class ModelConfig:
    input_hwc: tuple = (32, 32, 3)
    backbone: tuple = ()
    fc1_units: int = 64
    use_landmarks: bool = True
    landmark_dim: int = 136  # 2 * L, default 68 landmark points
    rnn_layers: int = 2
    rnn_units: int = 32
    head: str = REGRESSION_HEAD
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.head not in (REGRESSION_HEAD, CATEGORICAL_HEAD):
            raise ConfigError(f"unknown head kind {self.head!r}")
        if self.rnn_layers not in (0, 1, 2):
            raise ConfigError("rnn_layers must be 0, 1 or 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        self.feature_size()  # type-check the backbone chain

    @property
    def head_units(self) -> int:
        return 2 if self.head == REGRESSION_HEAD else NUM_CLASSES

    def feature_size(self) -> int:
        """Flattened CNN output size; validates the layer chain."""
        h, w, c = self.input_hwc
        try:
            for layer in self.backbone:
                if isinstance(layer, Conv):
                    if layer.cin != c:
                        raise ConfigError(
                            f"conv expects {layer.cin} channels but receives {c}")
                    h, w = T._conv_geometry(h, w, layer.kh, layer.kw,
                                            layer.stride, layer.stride, layer.padding)[:2]
                    c = layer.cout
                elif isinstance(layer, Pool):
                    h, w = T._conv_geometry(h, w, layer.k, layer.k,
                                            layer.stride, layer.stride, layer.padding)[:2]
                elif isinstance(layer, Relu):
                    continue
                else:
                    raise ConfigError(f"unknown backbone layer {layer!r}")
        except T.ShapeError as exc:
            raise ConfigError(str(exc)) from None
        if h < 1 or w < 1:
            raise ConfigError("backbone collapses spatial extent below 1")
        return h * w * c

    def fc1_input_size(self) -> int:
        extra = self.landmark_dim if self.use_landmarks else 0
        return self.feature_size() + extra

    def to_json(self) -> str:
        return json.dumps({
            "input_hwc": list(self.input_hwc),
            "backbone": [_layer_to_dict(l) for l in self.backbone],
            "fc1_units": self.fc1_units,
            "use_landmarks": self.use_landmarks,
            "landmark_dim": self.landmark_dim,
            "rnn_layers": self.rnn_layers,
            "rnn_units": self.rnn_units,
            "head": self.head,
            "dropout_rate": self.dropout_rate,
        })

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        d = json.loads(text)
        return cls(
            input_hwc=tuple(d["input_hwc"]),
            backbone=tuple(_layer_from_dict(l) for l in d["backbone"]),
            fc1_units=d["fc1_units"],
            use_landmarks=d["use_landmarks"],
            landmark_dim=d["landmark_dim"],
            rnn_layers=d["rnn_layers"],
            rnn_units=d["rnn_units"],
            head=d["head"],
            dropout_rate=d["dropout_rate"],
        )


def desk_config(**overrides) -> ModelConfig:
    """The default small-scale stand-in for the VGG-style backbones."""
    defaults = dict(
        input_hwc=(32, 32, 3),
        backbone=(
            Conv(3, 3, 3, 16), Relu(), Pool(2, 2),
            Conv(3, 3, 16, 32), Relu(), Pool(2, 2),
        ),
        fc1_units=64,
        use_landmarks=True,
        landmark_dim=136,
        rnn_layers=2,
        rnn_units=32,
        head=REGRESSION_HEAD,
        dropout_rate=0.5,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


GRU_KEYS = ("wr", "ur", "br", "wz", "uz", "bz", "wh", "uh", "bh")


def _param_shapes(config: ModelConfig) -> dict[str, tuple]:
    shapes: dict[str, tuple] = {}
    conv_idx = 0
    for layer in config.backbone:
        if isinstance(layer, Conv):
            shapes[f"conv{conv_idx}_w"] = (layer.kh, layer.kw, layer.cin, layer.cout)
            shapes[f"conv{conv_idx}_b"] = (layer.cout,)
            conv_idx += 1
    shapes["fc1_w"] = (config.fc1_input_size(), config.fc1_units)
    shapes["fc1_b"] = (config.fc1_units,)
    in_size = config.fc1_units
    for layer in range(config.rnn_layers):
        u = config.rnn_units
        for key in GRU_KEYS:
            if key.startswith("w"):
                shapes[f"gru{layer}_{key}"] = (in_size, u)
            elif key.startswith("u"):
                shapes[f"gru{layer}_{key}"] = (u, u)
            else:
                shapes[f"gru{layer}_{key}"] = (u,)
        in_size = u
    shapes["head_w"] = (in_size, config.head_units)
    shapes["head_b"] = (config.head_units,)
    return shapes


def parameter_count(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in _param_shapes(config).values())


def _init_param(shape: tuple, rng: np.random.Generator) -> np.ndarray:
    if len(shape) == 1:  # biases start at zero
        return np.zeros(shape)
    fan_in = int(np.prod(shape[:-1]))
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class ModelInstance:
    config: ModelConfig
    params: dict[str, Tensor]
    seed: int

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def build(config: ModelConfig, seed: int) -> ModelInstance:
    """Allocate and initialize parameters (uniform fan-in scaling, zero biases)."""
    rng = np.random.default_rng(seed)
    params = {
        name: Tensor(_init_param(shape, rng), requires_grad=True, name=name)
        for name, shape in _param_shapes(config).items()
    }
    return ModelInstance(config, params, seed)


# --------------------------------------------------------------------- forward

def _backbone_forward(m: ModelInstance, x: Tensor) -> Tensor:
    conv_idx = 0
    out = x
    for layer in m.config.backbone:
        if isinstance(layer, Conv):
            out = T.conv2d(out, m.params[f"conv{conv_idx}_w"],
                           stride=layer.stride, padding=layer.padding)
            out = out + m.params[f"conv{conv_idx}_b"]
            conv_idx += 1
        elif isinstance(layer, Pool):
            out = T.maxpool2d(out, ksize=layer.k, stride=layer.stride, padding=layer.padding)
        elif isinstance(layer, Relu):
            out = T.relu(out)
    return out


def forward(m: ModelInstance, frames, landmarks=None, train: bool = False,
            rng: np.random.Generator | None = None) -> Tensor:
    """Map B x T x H x W x C frames (plus optional B x T x 2L landmarks) to
    B x T x outputs.

    Per-frame CNN features are flattened, fused with the frame's landmark
    vector, passed through FC1 (ReLU then dropout), consumed stepwise by the
    GRU stack, and mapped by the head.  The GRU state starts at zero for every
    call.  The regression head is linear; the categorical head emits softmax
    probabilities.
    """
    cfg = m.config
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 5 or frames.shape[2:] != tuple(cfg.input_hwc):
        raise T.ShapeError(
            f"frames must be B x T x {cfg.input_hwc}, got {frames.shape}")
    b, t = frames.shape[:2]
    if cfg.use_landmarks:
        if landmarks is None:
            raise ValueError("model was configured with landmark fusion; "
                             "landmarks are required")
        landmarks = np.asarray(landmarks, dtype=np.float64)
        if landmarks.shape != (b, t, cfg.landmark_dim):
            raise T.ShapeError(
                f"landmarks must be {b} x {t} x {cfg.landmark_dim}, got {landmarks.shape}")

    x = Tensor(frames.reshape(b * t, *cfg.input_hwc))
    feats = _backbone_forward(m, x)
    feats = T.reshape(feats, (b * t, -1))
    if cfg.use_landmarks:
        feats = T.concat([feats, Tensor(landmarks.reshape(b * t, cfg.landmark_dim))], axis=1)
    fc1 = T.relu(T.matmul(feats, m.params["fc1_w"]) + m.params["fc1_b"])
    fc1 = T.dropout(fc1, cfg.dropout_rate, train=train, rng=rng)
    fc1 = T.reshape(fc1, (b, t, cfg.fc1_units))

    if cfg.rnn_layers == 0:
        flat = T.reshape(fc1, (b * t, cfg.fc1_units))
        out = T.matmul(flat, m.params["head_w"]) + m.params["head_b"]
        if cfg.head == CATEGORICAL_HEAD:
            out = T.softmax(out, axis=-1)
        return T.reshape(out, (b, t, cfg.head_units))

    steps = [T.reshape(T.narrow(fc1, 1, s, 1), (b, cfg.fc1_units)) for s in range(t)]
    for layer in range(cfg.rnn_layers):
        p = {key: m.params[f"gru{layer}_{key}"] for key in GRU_KEYS}
        h = Tensor(np.zeros((b, cfg.rnn_units)))
        outputs = []
        for step in steps:
            h = T.gru_cell(step, h, p)
            outputs.append(h)
        steps = outputs
    per_step = [T.matmul(h, m.params["head_w"]) + m.params["head_b"] for h in steps]
    out = T.concat([T.reshape(o, (b, 1, cfg.head_units)) for o in per_step], axis=1)
    if cfg.head == CATEGORICAL_HEAD:
        out = T.softmax(out, axis=-1)
    return out


# ------------------------------------------------------------------- head swap

def swap_head(m: ModelInstance, new_head: str, seed: int) -> ModelInstance:
    """Replace the output layer at the new width; every other parameter is
    preserved bit-exactly."""
    cfg = ModelConfig(
        input_hwc=m.config.input_hwc,
        backbone=m.config.backbone,
        fc1_units=m.config.fc1_units,
        use_landmarks=m.config.use_landmarks,
        landmark_dim=m.config.landmark_dim,
        rnn_layers=m.config.rnn_layers,
        rnn_units=m.config.rnn_units,
        head=new_head,
        dropout_rate=m.config.dropout_rate,
    )
    rng = np.random.default_rng(seed)
    shapes = _param_shapes(cfg)
    params = {}
    for name, shape in shapes.items():
        if name in ("head_w", "head_b"):
            params[name] = Tensor(_init_param(shape, rng), requires_grad=True, name=name)
        else:
            params[name] = Tensor(m.params[name].data.copy(), requires_grad=True, name=name)
    return ModelInstance(cfg, params, seed)


def aggregate_video(frame_probs: np.ndarray) -> int:
    """Video-level class: argmax of the mean per-frame probability vector;
    ties break to the lowest class index."""
    probs = np.asarray(frame_probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ValueError(f"frame_probs must be a nonempty T x K matrix, got {probs.shape}")
    return int(probs.mean(axis=0).argmax())


# ----------------------------------------------------------------- checkpoints

def save_model(path, m: ModelInstance) -> None:
    save_archive(path, m.named_arrays(), config_text=m.config.to_json())


def load_model(path) -> ModelInstance:
    arrays, config_text = load_archive(path)
    if not config_text:
        raise CheckpointError(f"{path}: checkpoint carries no model config")
    config = ModelConfig.from_json(config_text)
    expected = _param_shapes(config)
    if set(expected) != set(arrays):
        raise CheckpointError(f"{path}: parameter names do not match the config")
    params = {}
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise CheckpointError(
                f"{path}: parameter {name} has shape {arrays[name].shape}, expected {shape}")
        params[name] = Tensor(arrays[name], requires_grad=True, name=name)
    return ModelInstance(config, params, seed=-1)
