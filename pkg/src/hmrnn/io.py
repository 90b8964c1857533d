"""File formats.

Sequences CSV (no header, ragged rows, 0-indexed categories)::

    seq_id,y_0,y_1,...

Model JSON: ``{"k": .., "c": .., "pi": [...], "P": [[...]], "Psi": [[...]]}``
with floats written at full (round-trip) precision.

Covariates CSV (header ``seq_id,x_1,...,x_d``) and auxiliary outcomes CSV
(header ``seq_id,t,value``) are keyed by ``seq_id``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from hmrnn.core import HmmParams, ObservationDataset
from hmrnn.errors import InvalidInputError


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_to_jsonable(obj), indent=2) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


def write_model(path, params: HmmParams):
    write_json(path, params.to_dict())


def read_model(path) -> HmmParams:
    d = read_json(path)
    if "model" in d and "pi" not in d:
        d = d["model"]
    return HmmParams.from_dict(d)


def write_sequences(path, data: ObservationDataset):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for sid, seq in zip(data.ids, data.sequences):
            w.writerow([sid, *seq.tolist()])


def read_sequences(path) -> ObservationDataset:
    ids, seqs = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            row = [cell.strip() for cell in row]
            while row and row[-1] == "":
                row.pop()
            if not row or row[0].startswith("#"):
                continue
            if len(row) < 2:
                raise InvalidInputError(f"{path}:{lineno}: sequence {row[0]!r} has no observations")
            if "" in row[1:]:
                raise InvalidInputError(f"{path}:{lineno}: missing observation inside sequence {row[0]!r}")
            try:
                seqs.append([int(v) for v in row[1:]])
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}") from exc
            ids.append(row[0])
    return ObservationDataset(seqs, ids=ids)


def write_covariates(path, data: ObservationDataset):
    if data.covariates is None:
        raise InvalidInputError("dataset has no covariates")
    d = data.covariates.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seq_id", *[f"x_{j + 1}" for j in range(d)]])
        for sid, row in zip(data.ids, data.covariates):
            w.writerow([sid, *[repr(float(v)) for v in row]])


def read_covariates(path, ids) -> np.ndarray:
    """Covariate matrix with rows ordered like ``ids``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = {}
        for row in reader:
            if not row:
                continue
            if row[0] in rows:
                raise InvalidInputError(f"duplicate covariate row for {row[0]!r}")
            rows[row[0]] = [float(v) for v in row[1:]]
    d = len(header) - 1
    missing = [i for i in ids if i not in rows]
    if missing:
        raise InvalidInputError(f"no covariates for sequence {missing[0]!r}")
    X = np.array([rows[i] for i in ids], dtype=float).reshape(len(ids), d)
    return X


def write_aux(path, data: ObservationDataset):
    if data.aux_values is None:
        raise InvalidInputError("dataset has no auxiliary outcomes")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seq_id", "t", "value"])
        for n, sid in enumerate(data.ids):
            for t in np.flatnonzero(data.aux_mask[n]):
                w.writerow([sid, int(t), int(data.aux_values[n, t])])


def read_aux(path, data: ObservationDataset):
    """(values, mask) arrays aligned with ``data``; unlisted visits are masked."""
    pos = {sid: n for n, sid in enumerate(data.ids)}
    lengths = data.lengths
    values = np.zeros((len(data), data.max_length))
    mask = np.zeros_like(values, dtype=bool)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            sid = row["seq_id"]
            if sid not in pos:
                raise InvalidInputError(f"auxiliary outcome for unknown sequence {sid!r}")
            n, t = pos[sid], int(row["t"])
            if not 0 <= t < lengths[n]:
                raise InvalidInputError(f"auxiliary time {t} outside sequence {sid!r}")
            v = row["value"].strip()
            if v in ("", "NA", "nan"):
                continue
            values[n, t] = float(v)
            mask[n, t] = True
    return values, mask


def load_dataset(sequences, covariates=None, aux=None) -> ObservationDataset:
    data = read_sequences(sequences)
    cov = read_covariates(covariates, data.ids) if covariates else None
    vals = mask = None
    if aux:
        vals, mask = read_aux(aux, data)
    return ObservationDataset(data.sequences, data.ids, cov, vals, mask)


def save_dataset(directory, data: ObservationDataset, stem="sequences"):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"sequences": directory / f"{stem}.csv"}
    write_sequences(paths["sequences"], data)
    if data.covariates is not None:
        paths["covariates"] = directory / f"{stem}_covariates.csv"
        write_covariates(paths["covariates"], data)
    if data.aux_values is not None:
        paths["aux"] = directory / f"{stem}_aux.csv"
        write_aux(paths["aux"], data)
    return paths
