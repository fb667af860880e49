"""Feature timelines, samples and on-disk formats.

The model never touches raw video; it consumes per-modality feature
timelines: rows of float32 vectors indexed by a float64 timestamp, strictly
increasing within a timeline.  Sample extraction walks backwards from an
annotated action start and picks the nearest timeline row for each required
step time, clamping at the timeline ends.

Formats handled here:

* binary timeline files (magic ``RUFT``), the compact default;
* CSV timelines ``timestamp,v0,...,v{D-1}`` for interoperability;
* annotation CSVs ``video_id,start_s,end_s,verb,noun,action``;
* detection CSVs ``video_id,timestamp,class_id,score,x1,y1,x2,y2``;
* model checkpoints (magic ``RUCK``): a JSON config header followed by
  named float64 tensors.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError, DimensionError, ParseError

_TIMELINE_MAGIC = b"RUFT"
_CHECKPOINT_MAGIC = b"RUCK"
_FORMAT_VERSION = 1


@dataclass
class FeatureTimeline:
    """All feature rows of one modality for one video."""

    video_id: str
    modality: str
    timestamps: np.ndarray  # float64 [N], strictly increasing
    vectors: np.ndarray     # float32 [N, D]

    def __post_init__(self) -> None:
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.timestamps.ndim != 1 or self.vectors.ndim != 2:
            raise DimensionError(
                f"timeline needs [N] timestamps and [N,D] vectors, got "
                f"{self.timestamps.shape} and {self.vectors.shape}")
        if len(self.timestamps) != len(self.vectors):
            raise DimensionError(
                f"timeline row mismatch: {len(self.timestamps)} timestamps, "
                f"{len(self.vectors)} vectors")
        if len(self.timestamps) == 0:
            raise DataError(f"timeline {self.video_id}/{self.modality} is empty")
        if np.any(np.diff(self.timestamps) <= 0):
            raise DataError(
                f"timeline {self.video_id}/{self.modality} timestamps not strictly increasing")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def nearest_row(self, time: float) -> tuple[int, bool]:
        """Index of the row closest in time, and whether ``time`` fell outside
        the covered span (clamped)."""
        ts = self.timestamps
        i = int(np.searchsorted(ts, time))
        if i == 0:
            return 0, bool(time < ts[0])
        if i == len(ts):
            return len(ts) - 1, bool(time > ts[-1])
        return (i - 1, False) if time - ts[i - 1] <= ts[i] - time else (i, False)


@dataclass
class ActionAnnotation:
    video_id: str
    start_s: float
    end_s: float
    verb_class: int
    noun_class: int
    action_class: int

    def __post_init__(self) -> None:
        if not self.start_s < self.end_s:
            raise DataError(
                f"annotation {self.video_id}@{self.start_s}: start must precede end "
                f"({self.start_s} >= {self.end_s})")
        for name, v in (("verb", self.verb_class), ("noun", self.noun_class),
                        ("action", self.action_class)):
            if v < 0:
                raise DataError(f"annotation {self.video_id}@{self.start_s}: "
                                f"negative {name} class {v}")


@dataclass
class DetectionRecord:
    """One object detection; the box is carried for provenance, unused."""

    video_id: str
    timestamp: float
    class_id: int
    score: float
    box: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.class_id < 0:
            raise DataError(f"detection in {self.video_id}: negative class {self.class_id}")
        if not (0.0 <= self.score <= 1.0):
            raise DataError(
                f"detection in {self.video_id}@{self.timestamp}: score {self.score} "
                f"outside [0, 1]")


@dataclass
class Sample:
    """One training or evaluation unit: aligned feature matrices per modality."""

    annotation: ActionAnnotation
    features: list[np.ndarray]        # float64 [T, D_m] per modality
    modalities: tuple[str, ...]
    protocol: str = "anticipation"    # or "early_recognition"
    n_clamped: int = 0                # step times that fell off the timeline

    @property
    def sample_id(self) -> str:
        return f"{self.annotation.video_id}:{self.annotation.start_s:.3f}"


def object_feature(detections, n_object_classes: int) -> np.ndarray:
    """Sum detection confidences per object class into a fixed-size vector."""
    if n_object_classes < 1:
        raise DataError(f"n_object_classes must be >= 1, got {n_object_classes}")
    out = np.zeros(n_object_classes, dtype=np.float64)
    for d in detections:
        if d.class_id >= n_object_classes:
            raise DataError(
                f"detection in {d.video_id}@{d.timestamp} has class {d.class_id} "
                f">= configured {n_object_classes}")
        out[d.class_id] += d.score
    return out


def build_object_timeline(detections, grid: np.ndarray, n_object_classes: int,
                          video_id: str, modality: str = "obj") -> FeatureTimeline:
    """Aggregate a video's detections onto a timestamp grid.

    Grid times with no detections get a zero row; each detection must land
    exactly on a grid time (detections are emitted at feature-snapshot
    times).
    """
    grid = np.asarray(grid, dtype=np.float64)
    index = {float(t): i for i, t in enumerate(grid)}
    rows = np.zeros((len(grid), n_object_classes), dtype=np.float64)
    for d in detections:
        if d.video_id != video_id:
            continue
        i = index.get(float(d.timestamp))
        if i is None:
            raise DataError(
                f"detection in {video_id}@{d.timestamp} is not on the feature grid")
        if d.class_id >= n_object_classes:
            raise DataError(
                f"detection in {video_id}@{d.timestamp} has class {d.class_id} "
                f">= configured {n_object_classes}")
        rows[i, d.class_id] += d.score
    return FeatureTimeline(video_id, modality, grid.copy(), rows.astype(np.float32))


# ---------------------------------------------------------------------------
# sample extraction


def extract_anticipation_sample(timelines: dict[str, FeatureTimeline],
                                annotation: ActionAnnotation, cfg) -> Sample:
    """Cut the observed window ending ``alpha`` seconds before the action.

    Step ``t`` (1-based, ``t = 1 .. s_enc+s_ant``) reads the timeline row
    nearest to ``start_s - alpha * (s_enc + s_ant + 1 - t)``.
    """
    n_steps = cfg.s_enc + cfg.s_ant
    target_times = [annotation.start_s - cfg.alpha * (n_steps + 1 - t)
                    for t in range(1, n_steps + 1)]
    return _gather(timelines, annotation, cfg, target_times, "anticipation")


def extract_early_recognition_sample(timelines: dict[str, FeatureTimeline],
                                     annotation: ActionAnnotation, cfg) -> Sample:
    """Cut uniformly spaced snippets spanning the action itself.

    Requires an encoder-less config (``s_enc == 0``); snippet ``k`` of
    ``s_ant`` reads the row nearest to
    ``start_s + (end_s - start_s) * k / s_ant``.
    """
    if cfg.s_enc != 0:
        raise ContractError(
            f"early recognition runs without an encoder prefix; got s_enc={cfg.s_enc}")
    span = annotation.end_s - annotation.start_s
    target_times = [annotation.start_s + span * k / cfg.s_ant
                    for k in range(1, cfg.s_ant + 1)]
    return _gather(timelines, annotation, cfg, target_times, "early_recognition")


def _gather(timelines, annotation, cfg, target_times, protocol) -> Sample:
    names = tuple(cfg.modality_names)
    feats = []
    clamped = 0
    for m, name in enumerate(names):
        tl = timelines.get(name)
        if tl is None:
            raise DataError(f"no {name!r} timeline for video {annotation.video_id}")
        if tl.dim != cfg.modality_dims[m]:
            raise DataError(
                f"timeline {annotation.video_id}/{name} has dim {tl.dim}, "
                f"config says {cfg.modality_dims[m]}")
        rows = np.empty((len(target_times), tl.dim), dtype=np.float64)
        for i, tt in enumerate(target_times):
            idx, was_clamped = tl.nearest_row(tt)
            rows[i] = tl.vectors[idx]
            clamped += int(was_clamped)
        feats.append(rows)
    return Sample(annotation=annotation, features=feats, modalities=names,
                  protocol=protocol, n_clamped=clamped)


def build_samples(timelines_by_video: dict[str, dict[str, FeatureTimeline]],
                  annotations, cfg, protocol: str = "anticipation") -> list[Sample]:
    """Extract one sample per annotation, resolving each video's timelines."""
    if protocol not in ("anticipation", "early_recognition"):
        raise ContractError(f"unknown protocol {protocol!r}")
    extract = (extract_anticipation_sample if protocol == "anticipation"
               else extract_early_recognition_sample)
    out = []
    for a in annotations:
        tls = timelines_by_video.get(a.video_id)
        if tls is None:
            raise DataError(f"annotation references unknown video {a.video_id!r}")
        out.append(extract(tls, a, cfg))
    return out


# ---------------------------------------------------------------------------
# dataset directory convention


@dataclass
class Dataset:
    """A dataset directory pulled into memory.

    Layout: ``features/<video>_<modality>.ruft`` for dense modalities,
    ``detections.csv`` for the object modality (aggregated at load time),
    ``annotations_train.csv`` / ``annotations_val.csv``, ``vocab.json`` and
    ``manifest.json`` describing modalities, dims and timing.
    """

    root: str
    manifest: dict
    timelines: dict[str, dict[str, FeatureTimeline]]
    train_annotations: list[ActionAnnotation]
    val_annotations: list[ActionAnnotation]
    vocab: "object"

    @property
    def modality_names(self) -> tuple[str, ...]:
        return tuple(self.manifest["modalities"])

    @property
    def modality_dims(self) -> tuple[int, ...]:
        return tuple(self.manifest["modality_dims"])


def load_dataset(root: str) -> Dataset:
    import os

    from .evaluation import ActionVocabulary

    manifest_path = os.path.join(root, "manifest.json")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except OSError as e:
        raise ParseError(f"{manifest_path}: cannot read ({e})") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"{manifest_path}: invalid JSON ({e})") from None
    for key in ("modalities", "modality_dims", "n_actions", "n_verbs", "n_nouns"):
        if key not in manifest:
            raise ParseError(f"{manifest_path}: missing field {key!r}")

    vocab = ActionVocabulary.load(os.path.join(root, "vocab.json"))
    n_actions = manifest["n_actions"]
    ann_kw = dict(n_verbs=manifest["n_verbs"], n_nouns=manifest["n_nouns"],
                  n_actions=n_actions)
    train_ann = load_annotations(os.path.join(root, "annotations_train.csv"), **ann_kw)
    val_ann = load_annotations(os.path.join(root, "annotations_val.csv"), **ann_kw)

    modalities = list(manifest["modalities"])
    obj_modality = manifest.get("object_modality")
    dense = [m for m in modalities if m != obj_modality]
    feat_dir = os.path.join(root, "features")
    timelines: dict[str, dict[str, FeatureTimeline]] = {}
    video_ids = sorted({a.video_id for a in train_ann + val_ann})
    for vid in video_ids:
        by_mod = {}
        for m in dense:
            path = os.path.join(feat_dir, f"{vid}_{m}.ruft")
            if not os.path.exists(path):
                path = os.path.join(feat_dir, f"{vid}_{m}.csv")
                if not os.path.exists(path):
                    raise DataError(f"no {m!r} timeline on disk for video {vid!r}")
                by_mod[m] = load_timeline_csv(path, vid, m)
            else:
                by_mod[m] = load_timeline(path)
        timelines[vid] = by_mod

    if obj_modality is not None:
        if not dense:
            raise DataError("object aggregation needs a dense modality for its time grid")
        n_obj = manifest.get("n_object_classes")
        if n_obj is None:
            raise ParseError(f"{manifest_path}: object modality without n_object_classes")
        by_video: dict[str, list[DetectionRecord]] = {v: [] for v in video_ids}
        for d in load_detections(os.path.join(root, "detections.csv")):
            if d.video_id in by_video:
                by_video[d.video_id].append(d)
        for vid in video_ids:
            grid = timelines[vid][dense[0]].timestamps
            timelines[vid][obj_modality] = build_object_timeline(
                by_video[vid], grid, n_obj, vid, obj_modality)

    return Dataset(root=root, manifest=manifest, timelines=timelines,
                   train_annotations=train_ann, val_annotations=val_ann, vocab=vocab)


# ---------------------------------------------------------------------------
# timeline files


def save_timeline(tl: FeatureTimeline, path: str) -> None:
    if str(path).endswith(".csv"):
        _save_timeline_csv(tl, path)
        return
    with open(path, "wb") as f:
        f.write(_TIMELINE_MAGIC)
        f.write(struct.pack("<B", _FORMAT_VERSION))
        _write_str(f, tl.video_id)
        _write_str(f, tl.modality)
        f.write(struct.pack("<iq", tl.dim, len(tl.timestamps)))
        for t, row in zip(tl.timestamps, tl.vectors):
            f.write(struct.pack("<d", t))
            f.write(row.tobytes())


def load_timeline(path: str) -> FeatureTimeline:
    if str(path).endswith(".csv"):
        return _load_timeline_csv(path)
    try:
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != _TIMELINE_MAGIC:
                raise ParseError(f"{path}: bad magic {magic!r}, expected {_TIMELINE_MAGIC!r}")
            (version,) = struct.unpack("<B", _read_exact(f, 1, path))
            if version != _FORMAT_VERSION:
                raise ParseError(f"{path}: unsupported timeline version {version}")
            video_id = _read_str(f, path)
            modality = _read_str(f, path)
            dim, n = struct.unpack("<iq", _read_exact(f, 12, path))
            if dim < 1 or n < 1:
                raise ParseError(f"{path}: invalid dims ({dim} features, {n} rows)")
            ts = np.empty(n, dtype=np.float64)
            vecs = np.empty((n, dim), dtype=np.float32)
            row_bytes = 4 * dim
            for i in range(n):
                (ts[i],) = struct.unpack("<d", _read_exact(f, 8, path))
                vecs[i] = np.frombuffer(_read_exact(f, row_bytes, path), dtype="<f4")
            trailing = f.read(1)
            if trailing:
                raise ParseError(f"{path}: trailing bytes after {n} rows")
    except OSError as e:
        raise ParseError(f"{path}: cannot read ({e})") from e
    return FeatureTimeline(video_id, modality, ts, vecs)


def _save_timeline_csv(tl: FeatureTimeline, path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["timestamp"] + [f"v{i}" for i in range(tl.dim)])
        for t, row in zip(tl.timestamps, tl.vectors):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def _load_timeline_csv(path: str, video_id: str = "", modality: str = "") -> FeatureTimeline:
    ts, rows = [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "timestamp":
            raise ParseError(f"{path}: expected a 'timestamp,v0,...' header")
        dim = len(header) - 1
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != dim + 1:
                raise ParseError(f"{path}:{lineno}: expected {dim + 1} fields, got {len(rec)}")
            try:
                ts.append(float(rec[0]))
                rows.append([float(v) for v in rec[1:]])
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: {e}") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return FeatureTimeline(video_id, modality, np.array(ts),
                           np.array(rows, dtype=np.float32))


def load_timeline_csv(path: str, video_id: str, modality: str) -> FeatureTimeline:
    return _load_timeline_csv(path, video_id, modality)


# ---------------------------------------------------------------------------
# annotation and detection files


_ANNOTATION_FIELDS = ["video_id", "start_s", "end_s", "verb", "noun", "action"]
_DETECTION_FIELDS = ["video_id", "timestamp", "class_id", "score",
                     "x1", "y1", "x2", "y2"]


def save_annotations(annotations, path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_ANNOTATION_FIELDS)
        for a in annotations:
            w.writerow([a.video_id, repr(float(a.start_s)), repr(float(a.end_s)),
                        a.verb_class, a.noun_class, a.action_class])


def load_annotations(path: str, *, n_verbs: int | None = None,
                     n_nouns: int | None = None,
                     n_actions: int | None = None) -> list[ActionAnnotation]:
    out = []
    for lineno, rec in _csv_rows(path, _ANNOTATION_FIELDS):
        try:
            a = ActionAnnotation(video_id=rec[0], start_s=float(rec[1]),
                                 end_s=float(rec[2]), verb_class=int(rec[3]),
                                 noun_class=int(rec[4]), action_class=int(rec[5]))
        except ValueError as e:
            raise ParseError(f"{path}:{lineno}: {e}") from None
        for name, v, limit in (("verb", a.verb_class, n_verbs),
                               ("noun", a.noun_class, n_nouns),
                               ("action", a.action_class, n_actions)):
            if limit is not None and v >= limit:
                raise DataError(f"{path}:{lineno}: {name} class {v} >= configured {limit}")
        out.append(a)
    return out


def save_detections(detections, path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_DETECTION_FIELDS)
        for d in detections:
            w.writerow([d.video_id, repr(float(d.timestamp)), d.class_id,
                        repr(float(d.score))] + [repr(float(v)) for v in d.box])


def load_detections(path: str) -> list[DetectionRecord]:
    out = []
    for lineno, rec in _csv_rows(path, _DETECTION_FIELDS):
        try:
            d = DetectionRecord(video_id=rec[0], timestamp=float(rec[1]),
                                class_id=int(rec[2]), score=float(rec[3]),
                                box=tuple(float(v) for v in rec[4:8]))
        except (ValueError, DataError) as e:
            if isinstance(e, DataError):
                raise DataError(f"{path}:{lineno}: {e}") from None
            raise ParseError(f"{path}:{lineno}: {e}") from None
        out.append(d)
    return out


def _csv_rows(path: str, fields: list[str]):
    try:
        f = open(path, newline="")
    except OSError as e:
        raise ParseError(f"{path}: cannot read ({e})") from e
    with f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != fields:
            raise ParseError(f"{path}: expected header {','.join(fields)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(fields):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(fields)} fields, got {len(rec)}")
            yield lineno, rec


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model, path: str) -> None:
    """Write config, architecture flags and all named tensors of a model."""
    cfg = model.config
    header = {
        "config": {
            "modality_dims": list(cfg.modality_dims),
            "n_actions": cfg.n_actions,
            "n_verbs": cfg.n_verbs,
            "n_nouns": cfg.n_nouns,
            "alpha": cfg.alpha,
            "s_enc": cfg.s_enc,
            "s_ant": cfg.s_ant,
            "hidden": cfg.hidden,
            "dropout_p": cfg.dropout_p,
            "modality_names": list(cfg.modality_names),
        },
        "arch": model.arch,
        "default_fusion": model.default_fusion,
        "stages_done": [sorted(s) for s in model.stages_done],
        "format_version": _FORMAT_VERSION,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    named = model.named_parameters()
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<B", _FORMAT_VERSION))
        f.write(struct.pack("<q", len(blob)))
        f.write(blob)
        f.write(struct.pack("<q", len(named)))
        for name, p in named:
            _write_str(f, name)
            arr = p.value.data
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            f.write(arr.astype("<f8").tobytes())


def load_checkpoint(path: str):
    """Rebuild a model from a checkpoint; the inverse of :func:`save_checkpoint`."""
    from .model import ModelConfig, RUModel  # deferred to avoid an import cycle

    try:
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != _CHECKPOINT_MAGIC:
                raise ParseError(f"{path}: bad magic {magic!r}, expected {_CHECKPOINT_MAGIC!r}")
            (version,) = struct.unpack("<B", _read_exact(f, 1, path))
            if version != _FORMAT_VERSION:
                raise ParseError(f"{path}: unsupported checkpoint version {version}")
            (blob_len,) = struct.unpack("<q", _read_exact(f, 8, path))
            try:
                header = json.loads(_read_exact(f, blob_len, path))
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}: corrupt header ({e})") from None
            cfgd = header["config"]
            cfg = ModelConfig(modality_dims=tuple(cfgd["modality_dims"]),
                              n_actions=cfgd["n_actions"], n_verbs=cfgd["n_verbs"],
                              n_nouns=cfgd["n_nouns"], alpha=cfgd["alpha"],
                              s_enc=cfgd["s_enc"], s_ant=cfgd["s_ant"],
                              hidden=cfgd["hidden"], dropout_p=cfgd["dropout_p"],
                              modality_names=tuple(cfgd["modality_names"]))
            model = RUModel(cfg, rng=np.random.default_rng(0), arch=header["arch"],
                            default_fusion=header.get("default_fusion"))
            model.stages_done = [set(s) for s in header["stages_done"]]
            (n_tensors,) = struct.unpack("<q", _read_exact(f, 8, path))
            by_name = dict(model.named_parameters())
            if n_tensors != len(by_name):
                raise ParseError(
                    f"{path}: {n_tensors} tensors but model wants {len(by_name)}")
            for _ in range(n_tensors):
                name = _read_str(f, path)
                p = by_name.get(name)
                if p is None:
                    raise ParseError(f"{path}: unknown tensor {name!r}")
                (ndim,) = struct.unpack("<B", _read_exact(f, 1, path))
                shape = struct.unpack(f"<{ndim}q", _read_exact(f, 8 * ndim, path))
                if tuple(shape) != p.value.data.shape:
                    raise ParseError(
                        f"{path}: tensor {name!r} shape {shape} does not match "
                        f"model shape {p.value.data.shape}")
                count = int(np.prod(shape)) if ndim else 1
                arr = np.frombuffer(_read_exact(f, 8 * count, path), dtype="<f8")
                p.value.data = arr.reshape(shape).copy()
                p.momentum_buffer = np.zeros_like(p.value.data)
            trailing = f.read(1)
            if trailing:
                raise ParseError(f"{path}: trailing bytes after tensor data")
    except OSError as e:
        raise ParseError(f"{path}: cannot read ({e})") from e
    except KeyError as e:
        raise ParseError(f"{path}: header missing field {e}") from None
    return model


# ---------------------------------------------------------------------------
# low-level helpers


def _write_str(f, s: str) -> None:
    b = s.encode("utf-8")
    f.write(struct.pack("<H", len(b)))
    f.write(b)


def _read_str(f, path: str) -> str:
    (n,) = struct.unpack("<H", _read_exact(f, 2, path))
    return _read_exact(f, n, path).decode("utf-8")


def _read_exact(f, n: int, path: str) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise ParseError(f"{path}: truncated file (wanted {n} bytes, got {len(b)})")
    return b
