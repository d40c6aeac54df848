"""OpenFace-style AU CSV ingestion.

Expected layout: a header row with ``frame, timestamp, AUxx_r ...`` columns
for the 17 graded AUs plus ``AU28_c`` presence. Extra columns are ignored.
Malformed files are rejected whole; no partial sequences are returned.
"""

from __future__ import annotations

import csv

import numpy as np

from ..errors import DataError, SchemaError
from ..facs import AU_IDS, AU_MAX_INTENSITY, NUM_AUS, AUSequence, au_ordinal

PRESENCE_ONLY_AUS = (28,)


def _column_name(au_id: int) -> str:
    if au_id in PRESENCE_ONLY_AUS:
        return f"AU{au_id:02d}_c"
    return f"AU{au_id:02d}_r"


REQUIRED_COLUMNS = tuple(_column_name(au) for au in AU_IDS)


def read_openface_au_csv(path, fps: float = 25.0) -> AUSequence:
    """Parse an OpenFace AU CSV into an AUSequence.

    Graded columns must already lie in [0, 5] (out-of-range rows are a
    DataError, not clamped); AU28_c presence maps 0 -> 0.0 and 1 -> 5.0.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        columns = {name.strip(): i for i, name in enumerate(header)}
        for required in REQUIRED_COLUMNS:
            if required not in columns:
                raise SchemaError(f"{path}: missing required column {required!r}")

        rows = []
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            vec = np.zeros(NUM_AUS)
            for au in AU_IDS:
                cell = row[columns[_column_name(au)]].strip()
                try:
                    value = float(cell)
                except (ValueError, IndexError):
                    raise SchemaError(
                        f"{path}:{rowno}: unparseable value {cell!r} for {_column_name(au)}"
                    ) from None
                if au in PRESENCE_ONLY_AUS:
                    if value not in (0.0, 1.0):
                        raise DataError(
                            f"{path}:{rowno}: {_column_name(au)} presence must be 0 or 1, "
                            f"got {value}"
                        )
                    value *= AU_MAX_INTENSITY
                elif not 0.0 <= value <= AU_MAX_INTENSITY:
                    raise DataError(
                        f"{path}:{rowno}: {_column_name(au)} value {value} outside "
                        f"[0, {AU_MAX_INTENSITY}]"
                    )
                vec[au_ordinal(au)] = value
            rows.append(vec)

    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return AUSequence(np.stack(rows), fps)


def write_openface_au_csv(seq: AUSequence, path) -> None:
    """Emit an AUSequence in the OpenFace column layout.

    AU28 is written as presence: exact round-trips require its intensities
    to be 0.0 or 5.0, which is what the synthetic rig produces.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "timestamp", *REQUIRED_COLUMNS])
        for t in range(len(seq)):
            cells = [str(t + 1), repr(t / seq.fps)]
            for au in AU_IDS:
                value = seq.frames[t, au_ordinal(au)]
                if au in PRESENCE_ONLY_AUS:
                    cells.append("1" if value >= AU_MAX_INTENSITY / 2 else "0")
                else:
                    cells.append(repr(float(value)))
            writer.writerow(cells)
