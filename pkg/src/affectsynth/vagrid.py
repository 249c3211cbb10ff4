"""Discretization of the 2D valence-arousal square into a 10x10 cell grid.

Cells are 0.2 x 0.2, half-open on [lo, lo + 0.2) except the last row and
column, which absorb the +1 edge so the square stays partitioned into
exactly 100 cells.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GRID_SIZE = 10
CELL_SPAN = 0.2


class AnnotationError(ValueError):
    """Bad annotation data (range, duplicate ids, broken references)."""


class EmptyCellError(LookupError):
    """Query against a cell that holds no frames."""


@dataclass(frozen=True)
class Annotation:
    """Per-frame affect label plus the sequence pairing.

    neutral_frame_id names the frame whose mesh serves as the rest pose
    when this frame's deformation is computed.
    """

    frame_id: str
    sequence_id: str
    neutral_frame_id: str
    valence: float
    arousal: float

    def __post_init__(self):
        if not (-1.0 <= self.valence <= 1.0):
            raise AnnotationError(f"{self.frame_id}: valence {self.valence} outside [-1, 1]")
        if not (-1.0 <= self.arousal <= 1.0):
            raise AnnotationError(f"{self.frame_id}: arousal {self.arousal} outside [-1, 1]")


class AnnotationSet:
    """Immutable collection of annotations with frame-id lookup."""

    def __init__(self, annotations: list[Annotation]):
        index: dict[str, Annotation] = {}
        for ann in annotations:
            if ann.frame_id in index:
                raise AnnotationError(f"duplicate frame_id {ann.frame_id!r}")
            index[ann.frame_id] = ann
        for ann in annotations:
            if ann.neutral_frame_id not in index:
                raise AnnotationError(
                    f"{ann.frame_id}: neutral frame {ann.neutral_frame_id!r} not in set"
                )
        self._annotations = tuple(annotations)
        self._index = index

    @property
    def annotations(self) -> tuple[Annotation, ...]:
        return self._annotations

    def __len__(self) -> int:
        return len(self._annotations)

    def __iter__(self):
        return iter(self._annotations)

    def __getitem__(self, frame_id: str) -> Annotation:
        return self._index[frame_id]

    def __contains__(self, frame_id: str) -> bool:
        return frame_id in self._index


@dataclass(frozen=True, order=True)
class CellIndex:
    """Grid coordinates: row indexes arousal, col indexes valence."""

    row: int
    col: int

    def __post_init__(self):
        if not (0 <= self.row < GRID_SIZE and 0 <= self.col < GRID_SIZE):
            raise ValueError(f"cell ({self.row}, {self.col}) outside the 10x10 grid")

    def center(self) -> tuple[float, float]:
        """(valence, arousal) of the cell midpoint."""
        return (
            -1.0 + CELL_SPAN * (self.col + 0.5),
            -1.0 + CELL_SPAN * (self.row + 0.5),
        )

    def bounds(self) -> tuple[float, float, float, float]:
        """(v_lo, v_hi, a_lo, a_hi) of the cell box."""
        v_lo = -1.0 + CELL_SPAN * self.col
        a_lo = -1.0 + CELL_SPAN * self.row
        return v_lo, v_lo + CELL_SPAN, a_lo, a_lo + CELL_SPAN


def cell_of(valence: float, arousal: float) -> CellIndex:
    """Map a (valence, arousal) pair to its grid cell.

    The +1 edge is clamped into the last row/column so every in-range
    pair lands in exactly one of the 100 cells.
    """
    if not (-1.0 <= valence <= 1.0):
        raise AnnotationError(f"valence {valence} outside [-1, 1]")
    if not (-1.0 <= arousal <= 1.0):
        raise AnnotationError(f"arousal {arousal} outside [-1, 1]")
    col = min(int(math.floor((valence + 1.0) / CELL_SPAN)), GRID_SIZE - 1)
    row = min(int(math.floor((arousal + 1.0) / CELL_SPAN)), GRID_SIZE - 1)
    return CellIndex(row=row, col=col)


class VaGrid:
    """Partition of an AnnotationSet over the 100 affect cells."""

    def __init__(self, source: AnnotationSet, cells: list[list[list[str]]]):
        self.source = source
        self._cells = tuple(tuple(tuple(ids) for ids in row) for row in cells)

    def frame_ids(self, cell: CellIndex) -> tuple[str, ...]:
        return self._cells[cell.row][cell.col]

    def histogram(self) -> np.ndarray:
        """10x10 occupancy counts; conserves the annotation total."""
        counts = np.zeros((GRID_SIZE, GRID_SIZE), dtype=np.int64)
        for r in range(GRID_SIZE):
            for c in range(GRID_SIZE):
                counts[r, c] = len(self._cells[r][c])
        return counts

    def nonempty_cells(self) -> list[CellIndex]:
        return [
            CellIndex(r, c)
            for r in range(GRID_SIZE)
            for c in range(GRID_SIZE)
            if self._cells[r][c]
        ]

    def median_va(self, cell: CellIndex) -> tuple[float, float]:
        """Componentwise median label of the cell's members."""
        ids = self.frame_ids(cell)
        if not ids:
            raise EmptyCellError(f"cell ({cell.row}, {cell.col}) is empty")
        vals = np.array([self.source[f].valence for f in ids])
        ars = np.array([self.source[f].arousal for f in ids])
        return float(np.median(vals)), float(np.median(ars))

    def nearest_nonempty_cell(self, cell: CellIndex) -> CellIndex:
        """Non-empty cell with the closest center; ties go to the
        lexicographically smaller (row, col)."""
        if self.frame_ids(cell):
            return cell
        candidates = self.nonempty_cells()
        if not candidates:
            raise EmptyCellError("grid has no populated cells")
        qv, qa = cell.center()
        best = None
        best_d = float("inf")
        for cand in sorted(candidates):
            cv, ca = cand.center()
            d = (cv - qv) ** 2 + (ca - qa) ** 2
            if d < best_d - 1e-15:
                best, best_d = cand, d
        return best


def build_grid(annotation_set: AnnotationSet) -> VaGrid:
    """Assign every frame to exactly one cell via cell_of."""
    cells: list[list[list[str]]] = [
        [[] for _ in range(GRID_SIZE)] for _ in range(GRID_SIZE)
    ]
    for ann in annotation_set:
        cell = cell_of(ann.valence, ann.arousal)
        cells[cell.row][cell.col].append(ann.frame_id)
    return VaGrid(annotation_set, cells)


def load_annotations(path: str | Path) -> AnnotationSet:
    """Annotation CSV: header `frame_id,sequence_id,neutral_frame_id,valence,arousal`."""
    path = Path(path)
    expected = ["frame_id", "sequence_id", "neutral_frame_id", "valence", "arousal"]
    annotations = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != expected:
            raise AnnotationError(
                f"{path}: header must be {','.join(expected)}, got {reader.fieldnames}"
            )
        for row in reader:
            annotations.append(
                Annotation(
                    frame_id=row["frame_id"],
                    sequence_id=row["sequence_id"],
                    neutral_frame_id=row["neutral_frame_id"],
                    valence=float(row["valence"]),
                    arousal=float(row["arousal"]),
                )
            )
    return AnnotationSet(annotations)


def save_annotations(annotation_set: AnnotationSet, path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_id", "sequence_id", "neutral_frame_id", "valence", "arousal"])
        for ann in annotation_set:
            writer.writerow(
                [
                    ann.frame_id,
                    ann.sequence_id,
                    ann.neutral_frame_id,
                    f"{ann.valence:.6f}",
                    f"{ann.arousal:.6f}",
                ]
            )
