/** Pure geometry and paint math for the valence-arousal wheel.
 *
 * The wheel maps the square [-1, 1]^2 onto a canvas with valence on x
 * (left = -1) and arousal on y (bottom = -1, so the canvas y axis is
 * flipped). Everything here is side-effect free so it can be tested
 * without a DOM.
 */

import type { GridPayload, WheelSelection } from "./types.js";

export const GRID_SIZE = 10;

/** Canvas pixel -> clamped (valence, arousal). */
export function clickToVa(
  px: number,
  py: number,
  size: number
): { valence: number; arousal: number } {
  const clamp = (v: number) => Math.max(-1, Math.min(1, v));
  return {
    valence: clamp((px / size) * 2 - 1),
    arousal: clamp(1 - (py / size) * 2),
  };
}

/** (valence, arousal) -> canvas pixel center-of-nothing; inverse of clickToVa. */
export function vaToCanvas(
  valence: number,
  arousal: number,
  size: number
): { x: number; y: number } {
  return {
    x: ((valence + 1) / 2) * size,
    y: ((1 - arousal) / 2) * size,
  };
}

/** Grid cell for an affect pair; the +1 edges fold into the last cell. */
export function cellOfVa(valence: number, arousal: number): { row: number; col: number } {
  const col = Math.min(Math.floor((valence + 1) / 0.2), GRID_SIZE - 1);
  const row = Math.min(Math.floor((arousal + 1) / 0.2), GRID_SIZE - 1);
  return { row, col };
}

/** Affect-space bounds of a cell: [vLo, vHi, aLo, aHi]. */
export function cellBounds(row: number, col: number): [number, number, number, number] {
  const vLo = -1 + 0.2 * col;
  const aLo = -1 + 0.2 * row;
  return [vLo, vLo + 0.2, aLo, aLo + 0.2];
}

export interface WheelCell {
  row: number;
  col: number;
  x: number;
  y: number;
  w: number;
  h: number;
  count: number;
  heat: number; // 0..1, relative to the most populated cell
  empty: boolean;
  median: [number, number] | null;
}

/** Per-cell paint rectangles for a grid payload on a square canvas.
 *
 * Heat is the cell count normalized by the maximum count; the values
 * echo the service payload and are never invented. Canvas y grows
 * downward, so row 0 (arousal -1) paints at the bottom.
 */
export function wheelCells(grid: GridPayload, size: number): WheelCell[] {
  const side = size / GRID_SIZE;
  let max = 0;
  for (const rowCounts of grid.counts) {
    for (const count of rowCounts) {
      max = Math.max(max, count);
    }
  }
  const cells: WheelCell[] = [];
  for (let row = 0; row < GRID_SIZE; row++) {
    for (let col = 0; col < GRID_SIZE; col++) {
      const count = grid.counts[row][col];
      cells.push({
        row,
        col,
        x: col * side,
        y: (GRID_SIZE - 1 - row) * side,
        w: side,
        h: side,
        count,
        heat: max > 0 ? count / max : 0,
        empty: count === 0,
        median: grid.medians[row][col],
      });
    }
  }
  return cells;
}

/** CSS color for a cell's heat; empty cells are visibly dimmed. */
export function heatColor(heat: number, empty: boolean): string {
  if (empty) {
    return "rgba(40, 44, 52, 0.9)";
  }
  const eased = Math.pow(heat, 0.6);
  const r = Math.round(30 + 90 * eased);
  const g = Math.round(60 + 150 * eased);
  const b = Math.round(110 + 60 * eased);
  return `rgb(${r}, ${g}, ${b})`;
}

/** Exact display strings for a selection; byte-for-byte the payload values. */
export function formatSelection(selection: WheelSelection): {
  valence: string;
  arousal: string;
  intensity: string;
} {
  return {
    valence: String(selection.valence),
    arousal: String(selection.arousal),
    intensity: String(selection.intensity),
  };
}

export function describeCell(cell: WheelCell): string {
  const [vLo, vHi, aLo, aHi] = cellBounds(cell.row, cell.col);
  const bounds = `V [${vLo.toFixed(1)}, ${vHi.toFixed(1)}) A [${aLo.toFixed(1)}, ${aHi.toFixed(1)})`;
  if (cell.median === null) {
    return `${bounds}: empty`;
  }
  return `${bounds}: ${cell.count} frames, median V ${cell.median[0]} A ${cell.median[1]}`;
}
