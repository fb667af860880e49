"""Seeded synthetic dataset generator.

Produces desk-scale data with a planted structure that mirrors what the
model is supposed to exploit:

* each action instance has one *informative* modality whose feature rows
  carry the class prototype, scaled by a signal-to-noise ramp that rises
  towards the action start (and, inside the action span, towards its end);
* the other modality carries a weaker *decoy* prototype of a different
  class, so single branches are systematically misled on half of the
  instances, uniform late fusion is diluted, and per-sample attention has
  something real to gain;
* the object modality is not written as a timeline: it is emitted as
  detection records at grid times whose per-class confidence sums
  reconstruct the planted rows.

Everything derives from one seed through named generator streams, so a
config generates bit-identical data on every call.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .evaluation import ActionVocabulary
from .features import ActionAnnotation, DetectionRecord, FeatureTimeline

MODALITY_NAMES = ("app", "obj")
_DETECTION_FLOOR = 0.05


@dataclass
class SynthConfig:
    n_videos: int = 10
    actions_per_video: int = 10
    val_videos: int = 3
    n_actions: int = 12
    n_verbs: int = 6
    n_nouns: int = 5
    appearance_dim: int = 16
    n_object_classes: int = 10
    informative_schedule: str = "alternate"  # or "fixed:0" / "fixed:1"
    noise_sigma: float = 0.3
    decoy_strength: float = 0.5
    burst_sigma: float = 0.0
    signal_scale: float = 2.0
    duration_s: float = 2.0
    alpha: float = 0.25
    s_enc: int = 6
    s_ant: int = 8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_videos < 1 or self.actions_per_video < 1:
            raise ConfigError("need at least one video and one action per video")
        if not (0 <= self.val_videos < self.n_videos):
            raise ConfigError(
                f"val_videos must be in [0, n_videos), got {self.val_videos} of {self.n_videos}")
        if self.n_actions < 2:
            raise ConfigError(f"n_actions must be >= 2, got {self.n_actions}")
        if self.n_actions > self.n_verbs * self.n_nouns:
            raise ConfigError(
                f"{self.n_actions} actions cannot get distinct (verb, noun) pairs "
                f"from {self.n_verbs} verbs x {self.n_nouns} nouns")
        if self.appearance_dim < 1 or self.n_object_classes < 1:
            raise ConfigError("feature dims must be >= 1")
        if self.informative_schedule != "alternate" and \
                self.informative_schedule not in ("fixed:0", "fixed:1"):
            raise ConfigError(f"unknown schedule {self.informative_schedule!r}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.decoy_strength < 0:
            raise ConfigError(f"decoy_strength must be >= 0, got {self.decoy_strength}")
        if self.burst_sigma < 0:
            raise ConfigError(f"burst_sigma must be >= 0, got {self.burst_sigma}")
        if self.alpha <= 0 or self.duration_s <= 0:
            raise ConfigError("alpha and duration_s must be positive")
        steps = self.duration_s / self.alpha
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError(
                f"duration_s={self.duration_s} is not a multiple of alpha={self.alpha}")
        if self.s_enc < 0 or self.s_ant < 1:
            raise ConfigError("need s_enc >= 0 and s_ant >= 1")

    @property
    def modality_dims(self) -> tuple[int, int]:
        return (self.appearance_dim, self.n_object_classes)

    @property
    def n_steps(self) -> int:
        return self.s_enc + self.s_ant


@dataclass
class SynthDataset:
    """In-memory result of :func:`generate`; write with :func:`write_dataset`."""

    config: SynthConfig
    timelines: dict[str, dict[str, FeatureTimeline]]  # video -> modality -> timeline
    detections: list[DetectionRecord]
    train_annotations: list[ActionAnnotation]
    val_annotations: list[ActionAnnotation]
    vocab: ActionVocabulary
    manifest: dict


def _informative_modality(cfg: SynthConfig, instance_index: int) -> int:
    if cfg.informative_schedule == "alternate":
        return instance_index % 2
    return int(cfg.informative_schedule.split(":", 1)[1])


def generate(cfg: SynthConfig) -> SynthDataset:
    """Generate the full dataset for ``cfg``, deterministically from its seed."""
    root = np.random.SeedSequence(cfg.seed)
    ss_proto, ss_assign, *ss_videos = root.spawn(2 + cfg.n_videos)
    rng_proto = np.random.default_rng(ss_proto)
    rng_assign = np.random.default_rng(ss_assign)

    # class prototypes; appearance rows are unit vectors scaled up, object
    # rows are sparse confidence patterns over a few object classes
    app_proto = rng_proto.normal(size=(cfg.n_actions, cfg.appearance_dim))
    app_proto *= cfg.signal_scale / np.linalg.norm(app_proto, axis=1, keepdims=True)
    obj_proto = np.zeros((cfg.n_actions, cfg.n_object_classes))
    n_active = min(3, cfg.n_object_classes)
    for c in range(cfg.n_actions):
        cols = rng_proto.choice(cfg.n_object_classes, size=n_active, replace=False)
        obj_proto[c, cols] = rng_proto.uniform(0.5, 0.95, size=n_active)

    total = cfg.n_videos * cfg.actions_per_video
    classes = rng_assign.permutation([i % cfg.n_actions for i in range(total)])
    decoys = np.array([(c + 1 + rng_assign.integers(cfg.n_actions - 1)) % cfg.n_actions
                       for c in classes])
    informative = np.array([_informative_modality(cfg, i) for i in range(total)])

    # diagonal enumeration of distinct (verb, noun) pairs so low action
    # counts still touch every verb and noun id
    pairs = [(v, (d - v) % cfg.n_nouns)
             for d in range(cfg.n_nouns) for v in range(cfg.n_verbs)]
    action_to_verb = [pairs[a][0] for a in range(cfg.n_actions)]
    action_to_noun = [pairs[a][1] for a in range(cfg.n_actions)]
    if set(action_to_verb) != set(range(cfg.n_verbs)) or \
            set(action_to_noun) != set(range(cfg.n_nouns)):
        raise ConfigError(
            f"{cfg.n_actions} actions cannot cover {cfg.n_verbs} verbs and "
            f"{cfg.n_nouns} nouns; raise n_actions or lower the counts")

    n_steps = cfg.n_steps
    lead = cfg.alpha * (n_steps + 2)
    # gap > alpha * n_steps keeps one instance's pre-action window clear of
    # the previous action's in-action rows
    period = cfg.duration_s + cfg.alpha * (n_steps + 3)
    dur_steps = int(round(cfg.duration_s / cfg.alpha))
    n_rows = int(round((lead + (cfg.actions_per_video - 1) * period
                        + cfg.duration_s + 2 * cfg.alpha) / cfg.alpha)) + 1

    timelines: dict[str, dict[str, FeatureTimeline]] = {}
    detections: list[DetectionRecord] = []
    annotations: list[ActionAnnotation] = []
    instances = []
    sigma_obj = cfg.noise_sigma * 0.3

    for v in range(cfg.n_videos):
        rng_v = np.random.default_rng(ss_videos[v])
        video_id = f"video{v:03d}"
        grid = np.arange(n_rows) * cfg.alpha
        rows_app = rng_v.normal(0.0, cfg.noise_sigma, size=(n_rows, cfg.appearance_dim))
        rows_obj = rng_v.normal(0.0, sigma_obj, size=(n_rows, cfg.n_object_classes))

        for j in range(cfg.actions_per_video):
            gi = v * cfg.actions_per_video + j
            c = int(classes[gi])
            m_star = int(informative[gi])
            decoy = int(decoys[gi])
            start = lead + j * period
            end = start + cfg.duration_s

            def put(time: float, ramp: float) -> None:
                k = int(round(time / cfg.alpha))
                sig_app = app_proto[c] if m_star == 0 else cfg.decoy_strength * app_proto[decoy]
                sig_obj = obj_proto[c] if m_star == 1 else cfg.decoy_strength * obj_proto[decoy]
                rows_app[k] += ramp * sig_app
                rows_obj[k] += ramp * sig_obj
                # the uninformative side of an instance can be made actively
                # unreliable: burst noise a per-modality encoder simply learns
                # to distrust, but which pollutes any encoder that has to read
                # both modalities through one input
                if cfg.burst_sigma > 0.0:
                    if m_star == 1:
                        rows_app[k] += rng_v.normal(0.0, cfg.burst_sigma,
                                                    size=cfg.appearance_dim)
                    else:
                        rows_obj[k] += rng_v.normal(0.0, cfg.burst_sigma * 0.3,
                                                    size=cfg.n_object_classes)

            for t in range(1, n_steps + 1):
                put(start - cfg.alpha * (n_steps + 1 - t), t / n_steps)
            for i in range(dur_steps + 1):
                put(start + i * cfg.alpha, i / dur_steps)

            annotations.append(ActionAnnotation(
                video_id=video_id, start_s=start, end_s=end,
                verb_class=action_to_verb[c], noun_class=action_to_noun[c],
                action_class=c))
            instances.append({
                "video_id": video_id, "start_s": start, "end_s": end,
                "action": c, "verb": action_to_verb[c], "noun": action_to_noun[c],
                "informative_modality": m_star, "decoy_class": decoy,
                "split": "val" if v >= cfg.n_videos - cfg.val_videos else "train",
            })

        rows_obj = np.clip(rows_obj, 0.0, 1.0)
        for k in range(n_rows):
            hot = np.flatnonzero(rows_obj[k] > _DETECTION_FLOOR)
            for jc in hot:
                x1, y1 = rng_v.uniform(0.0, 0.5, size=2)
                detections.append(DetectionRecord(
                    video_id=video_id, timestamp=float(grid[k]), class_id=int(jc),
                    score=float(rows_obj[k, jc]),
                    box=(float(x1), float(y1), float(x1 + rng_v.uniform(0.1, 0.5)),
                         float(y1 + rng_v.uniform(0.1, 0.5)))))
            rows_obj[k, rows_obj[k] <= _DETECTION_FLOOR] = 0.0

        timelines[video_id] = {
            "app": FeatureTimeline(video_id, "app", grid.copy(),
                                   rows_app.astype(np.float32)),
            "obj": FeatureTimeline(video_id, "obj", grid.copy(),
                                   rows_obj.astype(np.float32)),
        }

    n_train_videos = cfg.n_videos - cfg.val_videos
    train_ann = [a for a in annotations if int(a.video_id[5:]) < n_train_videos]
    val_ann = [a for a in annotations if int(a.video_id[5:]) >= n_train_videos]

    seen_actions = sorted({a.action_class for a in annotations})
    vocab = ActionVocabulary(
        action_to_verb=np.array(action_to_verb), action_to_noun=np.array(action_to_noun),
        many_shot_verbs=sorted({action_to_verb[c] for c in seen_actions}),
        many_shot_nouns=sorted({action_to_noun[c] for c in seen_actions}),
        many_shot_actions=seen_actions)

    manifest = {
        "alpha": cfg.alpha, "s_enc": cfg.s_enc, "s_ant": cfg.s_ant,
        "modalities": list(MODALITY_NAMES),
        "modality_dims": list(cfg.modality_dims),
        "object_modality": "obj", "n_object_classes": cfg.n_object_classes,
        "n_actions": cfg.n_actions, "n_verbs": cfg.n_verbs, "n_nouns": cfg.n_nouns,
        "duration_s": cfg.duration_s,
        "synth_config": asdict(cfg),
        "instances": instances,
    }
    return SynthDataset(config=cfg, timelines=timelines, detections=detections,
                        train_annotations=train_ann, val_annotations=val_ann,
                        vocab=vocab, manifest=manifest)


def write_dataset(ds: SynthDataset, out_dir: str) -> None:
    """Lay the dataset out on disk in the directory convention the loaders use.

    Only the dense modality is written as timeline files; the object modality
    ships as raw detections and is re-aggregated at load time.
    """
    from . import features as ft

    os.makedirs(os.path.join(out_dir, "features"), exist_ok=True)
    for video_id, by_mod in ds.timelines.items():
        ft.save_timeline(by_mod["app"],
                         os.path.join(out_dir, "features", f"{video_id}_app.ruft"))
    ft.save_detections(ds.detections, os.path.join(out_dir, "detections.csv"))
    ft.save_annotations(ds.train_annotations, os.path.join(out_dir, "annotations_train.csv"))
    ft.save_annotations(ds.val_annotations, os.path.join(out_dir, "annotations_val.csv"))
    ds.vocab.save(os.path.join(out_dir, "vocab.json"))
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(ds.manifest, f, indent=1, sort_keys=True)
        f.write("\n")
