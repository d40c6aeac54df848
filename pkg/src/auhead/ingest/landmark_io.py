"""Landmark sequence file I/O.

Format: CSV, one row per frame, 324 columns x0,y0,...,x161,y161 written as
64-bit decimal text (repr), so write/read round-trips are bit-identical.
"""

from __future__ import annotations

import csv

import numpy as np

from ..errors import SchemaError
from ..facs import NUM_LANDMARKS, LandmarkSequence

_COLUMNS = NUM_LANDMARKS * 2


def write_landmark_file(seq: LandmarkSequence, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        header = []
        for i in range(NUM_LANDMARKS):
            header += [f"x{i}", f"y{i}"]
        writer.writerow(["fps", repr(float(seq.fps))] + [""] * (_COLUMNS - 2))
        writer.writerow(header)
        for frame in seq.points:
            writer.writerow([repr(float(v)) for v in frame.reshape(-1)])


def read_landmark_file(path) -> LandmarkSequence:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            fps_row = next(reader)
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: truncated landmark file (missing header)") from None
        if len(fps_row) < 2 or fps_row[0] != "fps":
            raise SchemaError(f"{path}: first row must be 'fps,<value>'")
        try:
            fps = float(fps_row[1])
        except ValueError:
            raise SchemaError(f"{path}: unparseable fps value {fps_row[1]!r}") from None
        if len(header) != _COLUMNS or header[0] != "x0":
            raise SchemaError(
                f"{path}: expected {_COLUMNS} columns starting at x0, got {len(header)}"
            )

        frames = []
        for rowno, row in enumerate(reader, start=3):
            if not row:
                continue
            if len(row) != _COLUMNS:
                raise SchemaError(f"{path}:{rowno}: expected {_COLUMNS} values, got {len(row)}")
            try:
                values = np.array([float(cell) for cell in row], dtype=np.float64)
            except ValueError:
                raise SchemaError(f"{path}:{rowno}: unparseable coordinate") from None
            frames.append(values.reshape(NUM_LANDMARKS, 2))

    if not frames:
        raise SchemaError(f"{path}: no frames")
    return LandmarkSequence(np.stack(frames), fps)
