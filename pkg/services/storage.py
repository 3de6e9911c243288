"""File formats: raw corpus CSV, feature CSV + layout sidecar, model JSON and run artifacts."""
from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
from collections.abc import Iterator
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from app.schemas import PairDiagnostic, RecordDecision
from services.dataset import SegmentDataset
from services.datagen import SyntheticCorpus
from services.errors import LayoutMismatchError, MalformedInputError, StructuralError
from services.evaluation import ConfusionMatrix
from services.features import UNLABELED, FeatureLayout, RawRecord
from services.network import MultiClassModel, format_real

RAW_COLUMNS = ["record_id", "label", "channel", "t", "value"]
FEATURE_KEY_COLUMNS = ["record_id", "segment_index", "label"]
FLOAT_FORMAT = "%.16e"
_LINE_PATTERN = re.compile(r"line (\d+)")


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_text_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    descriptor, temporary = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(descriptor, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(temporary, path)
    except BaseException:
        Path(temporary).unlink(missing_ok=True)
        raise


def write_json(path: Path, payload: Any) -> None:
    write_text_atomic(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path: Path) -> Any:
    try:
        with Path(path).open("r", encoding="utf-8") as handle:
            return json.load(handle)
    except json.JSONDecodeError as exc:
        raise MalformedInputError(f"{path} is not valid JSON: {exc.msg}", exc.lineno) from exc


def _to_csv(frame: pd.DataFrame, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _read_csv(path: Path, **kwargs: Any) -> pd.DataFrame | Iterator[pd.DataFrame]:
    try:
        return pd.read_csv(path, **kwargs)
    except pd.errors.ParserError as exc:
        match = _LINE_PATTERN.search(str(exc))
        raise MalformedInputError(f"cannot parse {path}: {exc}", int(match.group(1)) if match else None) from exc
    except pd.errors.EmptyDataError as exc:
        raise MalformedInputError(f"{path} is empty", 1) from exc


def _first_bad_line(frame: pd.DataFrame, columns: list[str], offset: int = 0) -> int | None:
    bad = frame[columns].isna().any(axis=1).to_numpy()
    if bad.any():
        # header is line 1
        return offset + int(np.argmax(bad)) + 2
    return None


def _numeric(frame: pd.DataFrame, columns: list[str], path: Path, offset: int = 0) -> pd.DataFrame:
    converted = frame.copy()
    for column in columns:
        converted[column] = pd.to_numeric(frame[column], errors="coerce")
    line = _first_bad_line(converted, columns, offset)
    if line is not None:
        raise MalformedInputError(f"non-numeric or missing value in {path}", line)
    return converted


# raw corpus ---------------------------------------------------------------------------------


def write_raw_corpus(records: tuple[RawRecord, ...] | list[RawRecord], path: Path) -> None:
    frames = []
    for record in records:
        channels, width = record.samples.shape
        frames.append(
            pd.DataFrame(
                {
                    "record_id": record.record_id,
                    "label": record.label,
                    "channel": np.repeat(np.arange(1, channels + 1), width),
                    "t": np.tile(np.arange(width), channels),
                    "value": record.samples.reshape(-1),
                }
            )
        )
    _to_csv(pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=RAW_COLUMNS), path)


def read_raw_records(path: Path, artifacts: dict[str, set[int]] | None = None) -> list[RawRecord]:
    """Parse a raw corpus CSV into records, ordered by first appearance."""

    frame = _read_csv(path, dtype={"record_id": str})
    if list(frame.columns) != RAW_COLUMNS:
        raise MalformedInputError(f"raw corpus header must be {','.join(RAW_COLUMNS)}", 1)
    line = _first_bad_line(frame, ["record_id"])
    if line is not None:
        raise MalformedInputError("missing record_id", line)
    frame = _numeric(frame, ["label", "channel", "t", "value"], path)
    finite = np.isfinite(frame["value"].to_numpy())
    if not finite.all():
        raise MalformedInputError("non-finite sample value", int(np.argmax(~finite)) + 2)

    records: list[RawRecord] = []
    artifacts = artifacts or {}
    for record_id, rows in frame.groupby("record_id", sort=False):
        labels = rows["label"].unique()
        if len(labels) != 1:
            raise MalformedInputError(f"record {record_id} carries several labels", int(rows.index[0]) + 2)
        channels = []
        for channel in (1, 2):
            series = rows[rows["channel"] == channel].sort_values("t")
            if series.empty:
                raise MalformedInputError(f"record {record_id} lacks channel {channel}", int(rows.index[0]) + 2)
            if not np.array_equal(series["t"].to_numpy(), np.arange(len(series))):
                raise MalformedInputError(
                    f"record {record_id} channel {channel} sample indices are not 0..n-1", int(series.index[0]) + 2
                )
            channels.append(series["value"].to_numpy(dtype=float))
        if set(rows["channel"].unique()) - {1, 2}:
            raise MalformedInputError(f"record {record_id} has channels other than 1 and 2", int(rows.index[0]) + 2)
        if len(channels[0]) != len(channels[1]):
            raise MalformedInputError(f"record {record_id} channels differ in length", int(rows.index[0]) + 2)
        records.append(
            RawRecord(
                record_id=str(record_id),
                label=int(labels[0]),
                samples=np.vstack(channels),
                artifact_segments=frozenset(artifacts.get(str(record_id), ())),
            )
        )
    return records


def write_ground_truth(corpus: SyntheticCorpus, path: Path) -> None:
    payload = {
        "seed": corpus.seed,
        "spec": corpus.spec.model_dump(mode="json"),
        "class_band_profile": [[format_real(value) for value in row] for row in corpus.profile],
        "records": {
            record.record_id: {
                "label": record.label,
                "gain_curve": [format_real(value) for value in corpus.gain_curves[record.record_id]],
                "artifact_segments": sorted(record.artifact_segments),
            }
            for record in corpus.records
        },
    }
    write_json(path, payload)


def read_artifacts(path: Path) -> dict[str, set[int]]:
    payload = read_json(path)
    return {record_id: set(entry.get("artifact_segments", [])) for record_id, entry in payload["records"].items()}


def read_gain_curves(path: Path) -> dict[str, np.ndarray]:
    payload = read_json(path)
    return {
        record_id: np.array([float(value) for value in entry["gain_curve"]])
        for record_id, entry in payload["records"].items()
    }


# feature tables -----------------------------------------------------------------------------


def layout_sidecar(path: Path) -> Path:
    return Path(path).with_suffix(".layout.json")


def feature_columns(layout: FeatureLayout) -> list[str]:
    return FEATURE_KEY_COLUMNS + [f"f{k}" for k in range(1, layout.size + 1)]


def write_features(dataset: SegmentDataset, path: Path) -> None:
    frame = pd.DataFrame(dataset.values, columns=feature_columns(dataset.layout)[3:])
    labels = pd.Series(dataset.labels, dtype="Int64")
    frame.insert(0, "label", labels.mask(labels == UNLABELED))
    frame.insert(0, "segment_index", dataset.segment_indices)
    frame.insert(0, "record_id", dataset.record_ids)
    _to_csv(frame, path)
    write_json(layout_sidecar(path), {"layout": dataset.layout.to_dict(), "bba_corrected": dataset.bba_corrected})


def read_feature_meta(path: Path, n_features: int | None = None) -> tuple[FeatureLayout, bool]:
    sidecar = layout_sidecar(path)
    if sidecar.is_file():
        payload = read_json(sidecar)
        return FeatureLayout.from_dict(payload["layout"]), bool(payload.get("bba_corrected", False))
    if n_features is None:
        raise StructuralError(f"{path} has no layout sidecar ({sidecar.name})")
    return FeatureLayout.generic(n_features), False


def _feature_width(columns: list[str], path: Path) -> int:
    if columns[:3] != FEATURE_KEY_COLUMNS:
        raise MalformedInputError(f"feature header of {path} must start with {','.join(FEATURE_KEY_COLUMNS)}", 1)
    width = len(columns) - 3
    if width < 1 or columns[3:] != [f"f{k}" for k in range(1, width + 1)]:
        raise MalformedInputError(f"feature columns of {path} must be f1..f{width}", 1)
    return width


def _frame_to_arrays(frame: pd.DataFrame, width: int, path: Path, offset: int) -> dict[str, np.ndarray]:
    value_columns = [f"f{k}" for k in range(1, width + 1)]
    line = _first_bad_line(frame, ["record_id", "segment_index"], offset)
    if line is not None:
        raise MalformedInputError("missing record_id or segment_index", line)
    numeric = _numeric(frame, ["segment_index", *value_columns], path, offset)
    labels = pd.to_numeric(frame["label"], errors="coerce")
    bad_label = labels.isna() & frame["label"].notna()
    if bad_label.any():
        line = offset + int(np.argmax(bad_label.to_numpy())) + 2
        raise MalformedInputError("label must be a class index or empty", line)
    values = numeric[value_columns].to_numpy(dtype=float)
    finite_rows = np.isfinite(values).all(axis=1)
    if not finite_rows.all():
        raise MalformedInputError("non-finite feature value", offset + int(np.argmax(~finite_rows)) + 2)
    return {
        "values": values,
        "labels": labels.fillna(UNLABELED).to_numpy(dtype=int),
        "record_ids": frame["record_id"].astype(str).to_numpy(),
        "segment_indices": numeric["segment_index"].to_numpy(dtype=int),
    }


def read_features(path: Path) -> SegmentDataset:
    frame = _read_csv(path, dtype={"record_id": str})
    width = _feature_width(list(frame.columns), path)
    layout, corrected = read_feature_meta(path, width)
    if layout.size != width:
        raise LayoutMismatchError(f"{path} has {width} feature columns but its layout declares {layout.size}")
    return SegmentDataset(layout=layout, bba_corrected=corrected, **_frame_to_arrays(frame, width, path, 0))


def iter_feature_chunks(path: Path, chunk_rows: int) -> Iterator[dict[str, np.ndarray]]:
    """Stream a feature CSV in bounded chunks of parsed arrays."""

    reader = _read_csv(path, dtype={"record_id": str}, chunksize=chunk_rows)
    offset = 0
    width: int | None = None
    try:
        for frame in reader:
            if width is None:
                width = _feature_width(list(frame.columns), path)
            yield _frame_to_arrays(frame, width, path, offset)
            offset += len(frame)
    except pd.errors.ParserError as exc:
        match = _LINE_PATTERN.search(str(exc))
        raise MalformedInputError(f"cannot parse {path}: {exc}", int(match.group(1)) if match else None) from exc


def peek_feature_width(path: Path) -> int:
    header = _read_csv(path, dtype={"record_id": str}, nrows=0)
    return _feature_width(list(header.columns), path)


# models and run artifacts ---------------------------------------------------------------------


def write_model(model: MultiClassModel, path: Path) -> None:
    write_json(path, model.to_dict())


def read_model(path: Path) -> MultiClassModel:
    return MultiClassModel.from_dict(read_json(path))


def write_pair_diagnostics(rows: list[PairDiagnostic], path: Path) -> None:
    frame = pd.DataFrame(
        {
            "i": [row.i for row in rows],
            "j": [row.j for row in rows],
            "n_features": [row.n_features for row in rows],
            "val_error": [row.val_error for row in rows],
        }
    )
    _to_csv(frame, path)


def write_confusion(matrix: ConfusionMatrix, path: Path) -> None:
    columns = [f"pred_{k}" for k in range(1, matrix.q + 1)]
    frame = pd.DataFrame(matrix.counts, columns=columns)
    frame.insert(0, "true", np.arange(1, matrix.q + 1))
    _to_csv(frame, path)


def write_record_decisions(decisions: list[RecordDecision], q: int, path: Path) -> None:
    frame = pd.DataFrame(
        {
            "record_id": [d.record_id for d in decisions],
            "true": pd.array([d.true_class for d in decisions], dtype="Int64"),
            "predicted": [d.predicted_class for d in decisions],
            "probability": [d.probability for d in decisions],
        }
    )
    fractions = np.array([d.per_class_fractions for d in decisions], dtype=float).reshape(len(decisions), q)
    for k in range(q):
        frame[f"frac_{k + 1}"] = fractions[:, k]
    _to_csv(frame, path)


def is_raw_corpus(path: Path) -> bool:
    header = _read_csv(path, dtype=str, nrows=0)
    return list(header.columns) == RAW_COLUMNS
