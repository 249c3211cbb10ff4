/** Payloads and state shared across the explorer. */

export interface WheelSelection {
  valence: number;
  arousal: number;
  intensity: number;
}

export interface CellRef {
  row: number;
  col: number;
}

export interface SynthesizeRequest extends WheelSelection {
  session?: string;
}

export interface SynthesizeResponse {
  image_png_base64: string;
  cell: CellRef;
  median_va: [number, number];
}

export interface GridPayload {
  counts: number[][];
  medians: ([number, number] | null)[][];
}

export interface HealthPayload {
  status: string;
  preloaded_session?: string;
}

export interface HistoryEntry {
  selection: WheelSelection;
  imagePngBase64: string;
  cell: CellRef;
  medianVa: [number, number];
}

/** Error body the service returns: {error, field?, stage?}. */
export interface ServiceErrorBody {
  error: string;
  field?: string | null;
  stage?: string | null;
}
