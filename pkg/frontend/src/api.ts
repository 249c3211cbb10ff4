/** Thin typed client for the synthesis service. */

import type {
  GridPayload,
  HealthPayload,
  ServiceErrorBody,
  SynthesizeRequest,
  SynthesizeResponse,
} from "./types.js";

/** Carries the service's error body verbatim. */
export class ApiError extends Error {
  readonly status: number;
  readonly field: string | null;
  readonly stage: string | null;

  constructor(status: number, body: ServiceErrorBody) {
    super(body.error);
    this.status = status;
    this.field = body.field ?? null;
    this.stage = body.stage ?? null;
  }

  display(): string {
    const parts = [];
    if (this.stage) parts.push(`stage ${this.stage}`);
    if (this.field) parts.push(`field ${this.field}`);
    const suffix = parts.length ? ` (${parts.join(", ")})` : "";
    return `${this.message}${suffix}`;
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  let body: ServiceErrorBody = { error: `HTTP ${resp.status}` };
  try {
    const parsed = await resp.json();
    if (parsed && typeof parsed.error === "string") {
      body = parsed;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(resp.status, body);
}

export class ApiClient {
  constructor(readonly baseUrl: string, private readonly fetchFn: typeof fetch = fetch) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/+$/, "") + path;
  }

  async health(): Promise<HealthPayload> {
    const resp = await this.fetchFn(this.url("/health"));
    if (!resp.ok) throw await parseError(resp);
    return resp.json();
  }

  async grid(): Promise<GridPayload> {
    const resp = await this.fetchFn(this.url("/grid"));
    if (!resp.ok) throw await parseError(resp);
    return resp.json();
  }

  async createSession(image: Blob, landmarks: Blob): Promise<string> {
    const form = new FormData();
    form.append("image", image, "photo.png");
    form.append("landmarks", landmarks, "landmarks.csv");
    const resp = await this.fetchFn(this.url("/session"), { method: "POST", body: form });
    if (!resp.ok) throw await parseError(resp);
    const body = await resp.json();
    return body.session;
  }

  async synthesize(request: SynthesizeRequest): Promise<SynthesizeResponse> {
    const resp = await this.fetchFn(this.url("/synthesize"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    if (!resp.ok) throw await parseError(resp);
    return resp.json();
  }
}

/** The exact JSON body a selection submits; tests compare this byte-wise. */
export function synthesizePayload(
  selection: { valence: number; arousal: number; intensity: number },
  session?: string
): SynthesizeRequest {
  const payload: SynthesizeRequest = {
    valence: selection.valence,
    arousal: selection.arousal,
    intensity: selection.intensity,
  };
  if (session !== undefined) {
    payload.session = session;
  }
  return payload;
}
