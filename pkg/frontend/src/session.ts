/**
 * DOM-free annotation session state machine.
 *
 * Lifecycle: a full passive viewing of the video unlocks annotation; during
 * annotation one sample is captured per rendered frame at the current
 * playback time and slider value; pausing suspends capture. Samples are
 * buffered and flushed to the service in batches; a failed flush keeps the
 * buffer (and flags the session offline) so samples already accepted by the
 * service are never re-sent.
 */

import type { Dimension, RejectedSample, Sample, ServiceClient, VideoEntry } from './protocol.js';

export const SLIDER_STEP = 0.01;

export type SessionMode =
    | 'idle'        // nothing started yet
    | 'viewing'     // mandatory passive first viewing in progress
    | 'ready'       // viewing done, annotation not yet started
    | 'annotating'  // capturing samples while the video plays
    | 'paused'      // playback paused; capture suspended
    | 'closed';     // session closed on the service; review available

export interface SessionEvents {
    onOffline?(buffered: number): void;
    onReconnected?(): void;
    onRejected?(rejected: RejectedSample[]): void;
}

const clamp = (v: number): number => Math.min(1, Math.max(-1, v));

export class AnnotationSession {
    private mode: SessionMode = 'idle';
    private sliderValue = 0;
    private viewingPosition = 0;
    private viewingComplete = false;
    private sessionId: string | null = null;
    private buffer: Sample[] = [];
    private lastCapturedTime = -Infinity;
    private flushing = false;
    private offline = false;

    constructor(
        private readonly client: ServiceClient,
        readonly video: VideoEntry,
        readonly dimension: Dimension,
        readonly annotatorId: string,
        private readonly events: SessionEvents = {},
    ) {}

    get state(): SessionMode {
        return this.mode;
    }

    get slider(): number {
        return this.sliderValue;
    }

    get isOffline(): boolean {
        return this.offline;
    }

    get bufferedCount(): number {
        return this.buffer.length;
    }

    get id(): string | null {
        return this.sessionId;
    }

    // ------------------------------------------------------ passive viewing

    beginPassiveViewing(): void {
        if (this.mode !== 'idle') throw new Error(`cannot start viewing from ${this.mode}`);
        this.mode = 'viewing';
        this.viewingPosition = 0;
    }

    /** Advance the passive viewing; annotation unlocks only once the whole
     *  video has been watched. */
    viewingProgress(positionSeconds: number): void {
        if (this.mode !== 'viewing') return;
        this.viewingPosition = Math.max(this.viewingPosition, positionSeconds);
        if (this.viewingPosition >= this.video.duration) {
            this.viewingComplete = true;
            this.mode = 'ready';
        }
    }

    get annotationUnlocked(): boolean {
        return this.viewingComplete;
    }

    // ------------------------------------------------------------- controls

    setSlider(value: number): void {
        this.sliderValue = clamp(value);
    }

    /** Keyboard control: one key event moves the slider by 0.01. */
    stepSlider(direction: 1 | -1): void {
        this.setSlider(this.sliderValue + direction * SLIDER_STEP);
    }

    // ------------------------------------------------------------ annotation

    async start(): Promise<void> {
        if (!this.viewingComplete) {
            throw new Error('annotation is locked until one full passive viewing');
        }
        if (this.mode !== 'ready') throw new Error(`cannot start from ${this.mode}`);
        this.sessionId = await this.client.openSession(
            this.annotatorId, this.video.video_id, this.dimension);
        this.mode = 'annotating';
        this.lastCapturedTime = -Infinity;
    }

    /** Called once per rendered frame with the current playback time. */
    captureFrame(playbackTime: number): void {
        if (this.mode !== 'annotating') return;
        if (playbackTime < 0 || playbackTime > this.video.duration) return;
        // timestamps must be strictly increasing at millisecond precision
        const ts = Math.round(playbackTime * 1000) / 1000;
        if (ts <= this.lastCapturedTime) return;
        this.buffer.push({ timestamp: ts, value: this.sliderValue });
        this.lastCapturedTime = ts;
    }

    pause(): void {
        if (this.mode === 'annotating') this.mode = 'paused';
    }

    resume(): void {
        if (this.mode === 'paused') this.mode = 'annotating';
    }

    // ----------------------------------------------------------------- flush

    /** Push buffered samples. On network failure the buffer is kept intact,
     *  so nothing already accepted by the service is ever re-sent. */
    async flush(): Promise<void> {
        if (this.flushing || this.buffer.length === 0 || this.sessionId === null) return;
        const batch = this.buffer;
        this.flushing = true;
        try {
            const result = await this.client.pushSamples(this.sessionId, batch);
            this.buffer = this.buffer.slice(batch.length);
            if (this.offline) {
                this.offline = false;
                this.events.onReconnected?.();
            }
            if (result.rejected.length > 0) {
                this.events.onRejected?.(result.rejected);
            }
        } catch {
            this.offline = true;
            this.events.onOffline?.(this.buffer.length);
        } finally {
            this.flushing = false;
        }
    }

    /** Flush everything and close the session; returns the trace path. */
    async end(): Promise<string> {
        if (this.mode !== 'annotating' && this.mode !== 'paused') {
            throw new Error(`cannot end from ${this.mode}`);
        }
        if (this.sessionId === null) throw new Error('session never opened');
        while (this.buffer.length > 0) {
            const before = this.buffer.length;
            await this.flush();
            if (this.buffer.length === before) {
                throw new Error('service unreachable; samples remain buffered');
            }
        }
        const path = await this.client.closeSession(this.sessionId);
        this.mode = 'closed';
        return path;
    }

    // ---------------------------------------------------------------- review

    /** Read-only replay of the closed session's accepted samples. */
    async review() {
        if (this.sessionId === null) throw new Error('session never opened');
        if (this.mode !== 'closed') throw new Error('review requires a closed session');
        return this.client.review(this.sessionId);
    }
}

/** Value of the recorded trace at a playback time, for the review overlay:
 *  nearest sample, with exact midpoints resolving to the earlier one. */
export function traceValueAt(samples: Sample[], time: number): number {
    if (samples.length === 0) throw new Error('empty trace');
    let best = 0;
    for (let i = 1; i < samples.length; i++) {
        const d = Math.abs(samples[i].timestamp - time);
        if (d < Math.abs(samples[best].timestamp - time)) best = i;
    }
    return samples[best].value;
}
