/** Append-only per-session result history. */

import { synthesizePayload } from "./api.js";
import type { HistoryEntry, SynthesizeRequest, SynthesizeResponse, WheelSelection } from "./types.js";

export class SessionState {
  private readonly entries: HistoryEntry[] = [];

  constructor(readonly sessionId: string | null) {}

  get history(): readonly HistoryEntry[] {
    return this.entries;
  }

  record(selection: WheelSelection, response: SynthesizeResponse): HistoryEntry {
    const entry: HistoryEntry = {
      selection: { ...selection },
      imagePngBase64: response.image_png_base64,
      cell: response.cell,
      medianVa: response.median_va,
    };
    this.entries.push(entry);
    return entry;
  }

  /** The payload a replay of this entry re-issues: identical to the
   * original request by construction. */
  replayPayload(index: number): SynthesizeRequest {
    const entry = this.entries[index];
    return synthesizePayload(entry.selection, this.sessionId ?? undefined);
  }
}
