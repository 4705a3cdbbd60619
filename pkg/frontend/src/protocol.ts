/**
 * Annotation-service HTTP protocol: types and a fetch-based client.
 *
 * The service runs on local loopback; all payloads are JSON. Timestamps are
 * seconds with millisecond precision, values are reals in [-1, 1].
 */

export type Dimension = 'valence' | 'arousal';

export interface VideoEntry {
    video_id: string;
    uri: string;
    frame_rate: number;
    duration: number;
}

export interface Sample {
    timestamp: number;
    value: number;
}

export interface RejectedSample {
    index: number;
    reason: string;
}

export interface PushResult {
    accepted: number;
    rejected: RejectedSample[];
}

export interface Review {
    session_id: string;
    annotator_id: string;
    video_id: string;
    dimension: Dimension;
    samples: Sample[];
    video: VideoEntry;
}

/** The full protocol surface the UI depends on. */
export interface ServiceClient {
    listVideos(): Promise<VideoEntry[]>;
    openSession(annotatorId: string, videoId: string, dimension: Dimension): Promise<string>;
    pushSamples(sessionId: string, samples: Sample[]): Promise<PushResult>;
    closeSession(sessionId: string): Promise<string>;
    review(sessionId: string): Promise<Review>;
}

export class ServiceError extends Error {
    constructor(public readonly status: number, message: string) {
        super(message);
        this.name = 'ServiceError';
    }
}

export class HttpServiceClient implements ServiceClient {
    constructor(private readonly baseUrl: string) {}

    private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
        const resp = await fetch(this.baseUrl + path, {
            method,
            headers: body === undefined ? undefined : { 'Content-Type': 'application/json' },
            body: body === undefined ? undefined : JSON.stringify(body),
        });
        if (!resp.ok) {
            throw new ServiceError(resp.status, await resp.text());
        }
        return (await resp.json()) as T;
    }

    listVideos(): Promise<VideoEntry[]> {
        return this.request('GET', '/videos');
    }

    async openSession(annotatorId: string, videoId: string, dimension: Dimension): Promise<string> {
        const body = { annotator_id: annotatorId, video_id: videoId, dimension };
        const resp = await this.request<{ session_id: string }>('POST', '/sessions', body);
        return resp.session_id;
    }

    pushSamples(sessionId: string, samples: Sample[]): Promise<PushResult> {
        return this.request('POST', `/sessions/${sessionId}/samples`, { samples });
    }

    async closeSession(sessionId: string): Promise<string> {
        const resp = await this.request<{ trace_path: string }>(
            'POST', `/sessions/${sessionId}/close`);
        return resp.trace_path;
    }

    review(sessionId: string): Promise<Review> {
        return this.request('GET', `/sessions/${sessionId}/review`);
    }
}
