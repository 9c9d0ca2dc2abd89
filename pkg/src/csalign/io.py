"""Dataset directory layout and artifact serialization.

A dataset directory holds:

    manifest                key=value: subjects, C, T, K, sample_rate
    subjects/<id>.csv       header ``label,c0_t0,...,c{C-1}_t{T-1}``,
                            one trial per row, channel-major flatten
    embeddings.csv          header ``subject_id,e0,...``, one trial per row

All floats are serialized with 17 significant digits so artifacts
round-trip exactly at 64-bit precision.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .adapt import LossBreakdown
from .data import SubjectDataset, Trial
from .errors import ConfigError, ShapeError
from .selection import SelectionResult, SubjectEmbedding

__all__ = [
    "fmt",
    "write_dataset",
    "read_dataset",
    "read_manifest",
    "write_embeddings_csv",
    "read_embeddings_csv",
    "write_matrix_csv",
    "read_matrix_csv",
    "write_mds_csv",
    "write_selection_json",
    "read_selection_json",
    "write_train_log_csv",
    "write_json",
    "write_config_echo",
    "read_config_file",
]

TRAIN_LOG_COLUMNS = [
    "epoch",
    "L_cls",
    "L_FLA_ST",
    "L_FLA_SS",
    "L_DLA_ST",
    "L_DLA_SS",
    "L_total",
    "alpha_tau",
    "beta_tau",
    "lr",
    "target_acc",
    "wall_ms",
]


def fmt(x: float) -> str:
    """17-significant-digit decimal, lossless for float64."""
    return f"{float(x):.17g}"


def _write_kv(path: Path, entries: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in entries.items():
            fh.write(f"{key}={value}\n")


def _read_kv(path: Path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


read_config_file = _read_kv


def write_dataset(
    root,
    datasets: list[SubjectDataset],
    sample_rate: float,
    embeddings: list[SubjectEmbedding] | None = None,
) -> None:
    root = Path(root)
    (root / "subjects").mkdir(parents=True, exist_ok=True)
    first = datasets[0]
    _write_kv(
        root / "manifest",
        {
            "subjects": ",".join(ds.subject_id for ds in datasets),
            "C": first.channels,
            "T": first.samples,
            "K": first.n_classes,
            "sample_rate": fmt(sample_rate),
        },
    )
    for ds in datasets:
        _write_subject_csv(root / "subjects" / f"{ds.subject_id}.csv", ds)
    if embeddings is not None:
        write_embeddings_csv(root / "embeddings.csv", embeddings)


def _write_subject_csv(path: Path, ds: SubjectDataset) -> None:
    c, t = ds.channels, ds.samples
    header = ["label"] + [f"c{i}_t{j}" for i in range(c) for j in range(t)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for trial in ds.trials:
            label = "" if trial.label is None else str(trial.label)
            writer.writerow([label] + [fmt(v) for v in trial.signal.ravel()])


def read_manifest(root) -> dict:
    root = Path(root)
    raw = _read_kv(root / "manifest")
    try:
        return {
            "subjects": raw["subjects"].split(","),
            "C": int(raw["C"]),
            "T": int(raw["T"]),
            "K": int(raw["K"]),
            "sample_rate": float(raw["sample_rate"]),
        }
    except KeyError as exc:
        raise ConfigError(f"manifest is missing key {exc}") from exc


def read_dataset(root) -> tuple[list[SubjectDataset], dict]:
    root = Path(root)
    manifest = read_manifest(root)
    datasets = []
    for sid in manifest["subjects"]:
        path = root / "subjects" / f"{sid}.csv"
        if not path.exists():
            raise ConfigError(f"manifest lists subject {sid} but {path} is missing")
        datasets.append(
            _read_subject_csv(path, sid, manifest["C"], manifest["T"], manifest["K"])
        )
    return datasets, manifest


def _read_subject_csv(
    path: Path, subject_id: str, c: int, t: int, k: int
) -> SubjectDataset:
    trials = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != 1 + c * t:
            raise ShapeError(
                f"{path}: header has {len(header)} columns, expected {1 + c * t}"
            )
        for row in reader:
            label = int(row[0]) if row[0] else None
            signal = np.array(row[1:], dtype=np.float64).reshape(c, t)
            trials.append(Trial(signal, label))
    return SubjectDataset(subject_id=subject_id, trials=trials, n_classes=k)


def write_embeddings_csv(path, embeddings: list[SubjectEmbedding]) -> None:
    d = embeddings[0].vectors.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id"] + [f"e{i}" for i in range(d)])
        for emb in embeddings:
            for row in emb.vectors:
                writer.writerow([emb.subject_id] + [fmt(v) for v in row])


def read_embeddings_csv(path) -> list[SubjectEmbedding]:
    """Group per-trial rows by subject in order of first appearance."""
    groups: dict[str, list[np.ndarray]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "subject_id":
            raise ConfigError(f"{path}: expected header starting with subject_id")
        for row in reader:
            groups.setdefault(row[0], []).append(np.array(row[1:], dtype=np.float64))
    return [
        SubjectEmbedding(subject_id=sid, vectors=np.vstack(rows))
        for sid, rows in groups.items()
    ]


def write_matrix_csv(path, ids: list[str], matrix: np.ndarray) -> None:
    """Square matrix with a header row of subject ids; data rows follow
    the header order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ids)
        for row in np.asarray(matrix):
            writer.writerow([fmt(v) for v in row])


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        ids = next(reader)
        rows = [np.array(row, dtype=np.float64) for row in reader]
    return ids, np.vstack(rows)


def write_mds_csv(path, ids: list[str], coords: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "x", "y"])
        for sid, (x, y) in zip(ids, np.asarray(coords)):
            writer.writerow([sid, fmt(x), fmt(y)])


def write_selection_json(path, result: SelectionResult) -> None:
    write_json(
        path,
        {
            "target": result.target_id,
            "q": result.percentile,
            "delta": result.threshold,
            "selected": result.selected,
            "fallback_used": result.fallback_used,
        },
    )


def read_selection_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_train_log_csv(path, log: list[LossBreakdown]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAIN_LOG_COLUMNS)
        for entry in log:
            writer.writerow(
                [
                    entry.epoch,
                    fmt(entry.l_cls),
                    fmt(entry.l_fla_st),
                    fmt(entry.l_fla_ss),
                    fmt(entry.l_dla_st),
                    fmt(entry.l_dla_ss),
                    fmt(entry.l_total),
                    fmt(entry.alpha_tau),
                    fmt(entry.beta_tau),
                    fmt(entry.lr),
                    "" if entry.target_acc is None else fmt(entry.target_acc),
                    fmt(entry.wall_ms),
                ]
            )


def write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_config_echo(path, resolved: dict) -> None:
    entries = {}
    for key in sorted(resolved):
        value = resolved[key]
        entries[key] = fmt(value) if isinstance(value, float) else value
    _write_kv(Path(path), entries)
