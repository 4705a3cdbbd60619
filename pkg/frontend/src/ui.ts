/**
 * DOM wiring: video element beside a vertical slider, an annotate/review
 * mode switch, and a review overlay drawing the recorded trace.
 *
 * All session logic lives in session.ts; this module only translates DOM
 * events into session calls and renders state.
 */

import type { Dimension, Sample, ServiceClient, VideoEntry } from './protocol.js';
import { AnnotationSession, traceValueAt } from './session.js';

const FLUSH_INTERVAL_MS = 250;

export interface UiElements {
    video: HTMLVideoElement;
    slider: HTMLInputElement;       // type=range, vertical, min=-1 max=1 step=0.01
    startButton: HTMLButtonElement;
    reviewButton: HTMLButtonElement;
    status: HTMLElement;
    overlay: HTMLCanvasElement;
}

export class AnnotationApp {
    private session: AnnotationSession | null = null;
    private flushTimer: number | null = null;
    private frameHandle: number | null = null;
    private reviewSamples: Sample[] | null = null;

    constructor(
        private readonly client: ServiceClient,
        private readonly el: UiElements,
        private readonly annotatorId: string,
    ) {}

    async load(video: VideoEntry, dimension: Dimension): Promise<void> {
        this.session = new AnnotationSession(this.client, video, dimension, this.annotatorId, {
            onOffline: (n) => this.setStatus(`service unreachable — ${n} sample(s) buffered locally`),
            onReconnected: () => this.setStatus('reconnected; buffered samples sent'),
        });
        this.el.video.src = video.uri;
        this.el.slider.disabled = true;
        this.el.startButton.disabled = true;
        this.bindControls();
        this.setStatus('watch the whole video once before annotating');
        this.session.beginPassiveViewing();
        this.el.video.addEventListener('timeupdate', () => {
            this.session?.viewingProgress(this.el.video.currentTime);
            if (this.session?.annotationUnlocked && this.el.startButton.disabled) {
                this.el.startButton.disabled = false;
                this.setStatus('viewing complete — annotation unlocked');
            }
        });
        this.el.video.addEventListener('ended', () => void this.onVideoEnded());
        this.el.video.addEventListener('pause', () => this.session?.pause());
        this.el.video.addEventListener('play', () => this.session?.resume());
    }

    private bindControls(): void {
        this.el.slider.addEventListener('input', () => {
            this.session?.setSlider(Number(this.el.slider.value));
        });
        document.addEventListener('keydown', (ev) => {
            if (!this.session) return;
            if (ev.key === 'ArrowUp') this.session.stepSlider(1);
            else if (ev.key === 'ArrowDown') this.session.stepSlider(-1);
            else return;
            this.el.slider.value = String(this.session.slider);
            ev.preventDefault();
        });
        this.el.startButton.addEventListener('click', () => void this.startAnnotation());
        this.el.reviewButton.addEventListener('click', () => void this.startReview());
    }

    private async startAnnotation(): Promise<void> {
        if (!this.session) return;
        await this.session.start();
        this.el.slider.disabled = false;
        this.el.video.currentTime = 0;
        await this.el.video.play();
        this.setStatus('annotating — move the slider as the video plays');
        const tick = () => {
            this.session?.captureFrame(this.el.video.currentTime);
            this.frameHandle = requestAnimationFrame(tick);
        };
        this.frameHandle = requestAnimationFrame(tick);
        this.flushTimer = window.setInterval(
            () => void this.session?.flush(), FLUSH_INTERVAL_MS);
    }

    private async onVideoEnded(): Promise<void> {
        if (!this.session || this.session.state === 'closed') return;
        if (this.session.state !== 'annotating' && this.session.state !== 'paused') return;
        this.stopTimers();
        const path = await this.session.end();
        this.el.slider.disabled = true;
        this.el.reviewButton.disabled = false;
        this.setStatus(`session saved: ${path}`);
    }

    private async startReview(): Promise<void> {
        if (!this.session) return;
        const review = await this.session.review();
        this.reviewSamples = review.samples;
        this.el.video.currentTime = 0;
        await this.el.video.play();
        this.setStatus('review — recorded trace overlaid (read-only)');
        const tick = () => {
            this.drawOverlay(this.el.video.currentTime);
            this.frameHandle = requestAnimationFrame(tick);
        };
        this.frameHandle = requestAnimationFrame(tick);
    }

    private drawOverlay(time: number): void {
        const samples = this.reviewSamples;
        const ctx = this.el.overlay.getContext('2d');
        if (!samples || !ctx) return;
        const { width, height } = this.el.overlay;
        const duration = this.session!.video.duration;
        ctx.clearRect(0, 0, width, height);
        ctx.beginPath();
        for (let i = 0; i < samples.length; i++) {
            const x = (samples[i].timestamp / duration) * width;
            const y = ((1 - samples[i].value) / 2) * height;
            if (i === 0) ctx.moveTo(x, y);
            else ctx.lineTo(x, y);
        }
        ctx.strokeStyle = '#2585cc';
        ctx.stroke();
        const mx = (time / duration) * width;
        const my = ((1 - traceValueAt(samples, time)) / 2) * height;
        ctx.beginPath();
        ctx.arc(mx, my, 5, 0, 2 * Math.PI);
        ctx.fillStyle = '#cc4025';
        ctx.fill();
    }

    private stopTimers(): void {
        if (this.flushTimer !== null) window.clearInterval(this.flushTimer);
        if (this.frameHandle !== null) cancelAnimationFrame(this.frameHandle);
        this.flushTimer = null;
        this.frameHandle = null;
    }

    private setStatus(text: string): void {
        this.el.status.textContent = text;
    }
}
