"""JSON and CSV writers shared by every artifact the toolkit emits.

JSON is written with sorted keys so identical inputs give identical bytes;
floats in CSV use 17 significant digits so they re-parse exactly.
"""
import csv
import json
from pathlib import Path

import numpy as np


def _to_builtin(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def dumps(data):
    return json.dumps(data, indent=2, sort_keys=True, default=_to_builtin)


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(data) + '\n')
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def _format(value):
    if isinstance(value, (float, np.floating)):
        return f'{float(value):.17g}'
    return value


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='') as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(v) for v in row])
    return path


def read_csv(path):
    """(header, rows) with every cell left as a string"""
    with Path(path).open(newline='') as handle:
        reader = csv.reader(handle)
        header = next(reader)
        rows = [row for row in reader]
    return header, rows


def read_numeric_csv(path):
    """(header, 2D float array); empty cells become NaN"""
    header, rows = read_csv(path)
    data = np.array([[float(c) if c != '' else np.nan for c in row] for row in rows], dtype=float)
    return header, data.reshape(len(rows), len(header))
