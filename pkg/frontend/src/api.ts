// Typed client for the transcription service. One transcription request is
// in flight at a time: a newer request aborts and supersedes the older.

import {
  ServiceErrorBody,
  SpectrogramPayload,
  TrackInfo,
  TranscribeRequest,
  TranscribeResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function parseError(response: Response): Promise<ApiError> {
  let body: ServiceErrorBody | null = null;
  try {
    body = (await response.json()) as ServiceErrorBody;
  } catch {
    // non-JSON error body; fall through to generic message
  }
  return new ApiError(
    response.status,
    body?.code ?? `http_${response.status}`,
    body?.message ?? `request failed with status ${response.status}`,
  );
}

export class ApiClient {
  private inflight: AbortController | null = null;

  constructor(
    private baseUrl = "",
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path);
    if (!response.ok) {
      throw await parseError(response);
    }
    return (await response.json()) as T;
  }

  listTracks(): Promise<TrackInfo[]> {
    return this.getJson<TrackInfo[]>("/api/tracks");
  }

  spectrogram(trackId: string, maxFrames = 2000): Promise<SpectrogramPayload> {
    return this.getJson<SpectrogramPayload>(
      `/api/tracks/${encodeURIComponent(trackId)}/spectrogram?max_frames=${maxFrames}`,
    );
  }

  audioUrl(trackId: string): string {
    return `${this.baseUrl}/api/tracks/${encodeURIComponent(trackId)}/audio`;
  }

  /**
   * POST a transcription request. A newer call aborts the previous one;
   * the superseded promise rejects with DOMException(AbortError).
   */
  async transcribe(request: TranscribeRequest): Promise<TranscribeResponse> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    try {
      const response = await this.fetchImpl(this.baseUrl + "/api/transcribe", {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(request),
        signal: controller.signal,
      });
      if (!response.ok) {
        throw await parseError(response);
      }
      return (await response.json()) as TranscribeResponse;
    } finally {
      if (this.inflight === controller) {
        this.inflight = null;
      }
    }
  }

  cancel(): void {
    this.inflight?.abort();
    this.inflight = null;
  }
}
