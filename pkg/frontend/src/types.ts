// Wire types for the transcription service API.

export interface TrackInfo {
  id: string;
  duration: number;
  classes: string[];
}

export interface SpectrogramPayload {
  n_frames: number;
  n_mels: number;
  hop_seconds: number;
  source_n_frames: number;
  source_hop_seconds: number;
  values: number[][];
}

export interface PeakParams {
  delta: number;
  w1: number;
  w2: number;
  w3: number;
  w4: number;
  w5: number;
}

export interface TranscribeRequest {
  track_id: string;
  positive_times: number[];
  target_label?: string;
  peak_params?: PeakParams;
}

export interface TranscribeResponse {
  track_id: string;
  target_label: string;
  probabilities: number[];
  hop_seconds: number;
  onsets: number[];
  positive_times: number[];
}

export interface ServiceErrorBody {
  code: string;
  message: string;
}
