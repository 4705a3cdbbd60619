/** Entry point: pick the first manifest video and the dimension from the
 *  query string, then hand off to the app. */

import { HttpServiceClient } from './protocol.js';
import type { Dimension } from './protocol.js';
import { AnnotationApp } from './ui.js';

const SERVICE_URL = 'http://127.0.0.1:8710';

async function boot(): Promise<void> {
    const params = new URLSearchParams(window.location.search);
    const dimension = (params.get('dimension') ?? 'valence') as Dimension;
    const annotatorId = params.get('annotator') ?? 'anonymous';

    const client = new HttpServiceClient(SERVICE_URL);
    const videos = await client.listVideos();
    const videoId = params.get('video') ?? videos[0]?.video_id;
    const video = videos.find((v) => v.video_id === videoId);
    if (!video) throw new Error(`unknown video ${videoId}`);

    const app = new AnnotationApp(client, {
        video: document.getElementById('video') as HTMLVideoElement,
        slider: document.getElementById('slider') as HTMLInputElement,
        startButton: document.getElementById('start') as HTMLButtonElement,
        reviewButton: document.getElementById('review') as HTMLButtonElement,
        status: document.getElementById('status') as HTMLElement,
        overlay: document.getElementById('overlay') as HTMLCanvasElement,
    }, annotatorId);
    await app.load(video, dimension);
}

void boot();
