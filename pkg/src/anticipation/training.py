"""Training loops and the staged pipeline.

The schedule has three stages.  First each branch is pre-trained alone in
sequence-completion mode (the unrolling LSTM reads true future features);
then each branch is fine-tuned alone in anticipation mode; finally all
branches and the attention network are fine-tuned jointly.  Every stage is
plain SGD with momentum, runs a fixed number of epochs, evaluates the
validation metric after each one, and keeps the parameters of the best
epoch.

Determinism: each stage draws its shuffling and dropout randomness from a
generator seeded by (config seed, stage code), so adding or removing stages
never shifts the randomness of the others.  Stage momentum buffers start at
zero.  Wall-clock time is measured but never serialised; reports are
byte-identical across reruns.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, EvaluationError, ParameterError
from .evaluation import ActionVocabulary, ScoreTable, top_k_accuracy
from .features import Sample
from .model import (ARCH_ENCODER_ONLY, ARCH_FULL, ModelConfig, RUModel,
                    early_fusion_config, parse_fusion, single_branch_view)

EARLY_STOP_METRICS = ("top5_at_1s", "mean_top1_over_rates")

# stage codes feeding the per-stage seed streams
_SEED_MODEL_INIT = 0
_SEED_SCP_BASE = 100
_SEED_BRANCH_BASE = 200
_SEED_JOINT = 300


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    scp_epochs: int = 100
    scp_epochs_obj: int = 200   # detection-backed branches pre-train longer
    branch_epochs: int = 100
    joint_epochs: int = 100
    early_stop_metric: str = "top5_at_1s"
    at_tau: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError(f"momentum must satisfy 0 <= m < 1, got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("scp_epochs", "scp_epochs_obj", "branch_epochs", "joint_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.early_stop_metric not in EARLY_STOP_METRICS:
            raise ConfigError(f"unknown early_stop_metric {self.early_stop_metric!r}; "
                              f"expected one of {EARLY_STOP_METRICS}")

    def scp_epochs_for(self, modality_name: str) -> int:
        return self.scp_epochs_obj if modality_name == "obj" else self.scp_epochs


@dataclass
class TrainData:
    """Sample splits plus the vocabulary; what every stage consumes."""

    train: list[Sample]
    val: list[Sample]
    vocab: ActionVocabulary

    def __post_init__(self) -> None:
        if not self.train or not self.val:
            raise ContractError("training needs non-empty train and val splits")

    def select_modality(self, m: int) -> "TrainData":
        def cut(samples):
            return [replace(s, features=[s.features[m]],
                            modalities=(s.modalities[m],)) for s in samples]
        return TrainData(cut(self.train), cut(self.val), self.vocab)


@dataclass
class TrainReport:
    """Per-stage training record; wall clock stays out of the JSON view."""

    stage: str
    train_losses: list[float] = field(default_factory=list)
    val_metrics: list[float] = field(default_factory=list)
    selected_epoch: int = -1
    best_metric: float = float("-inf")
    wall_clock_s: float = 0.0

    def to_json_dict(self) -> dict:
        return {"stage": self.stage,
                "train_losses": self.train_losses,
                "val_metrics": self.val_metrics,
                "selected_epoch": self.selected_epoch,
                "best_metric": self.best_metric}


def loss_anticipation(step_outputs, targets) -> ad.Tensor:
    """Cross entropy of the fused scores, averaged over anticipation steps."""
    if not step_outputs:
        raise ContractError("loss needs at least one step output")
    total = None
    for out in step_outputs:
        term = ad.cross_entropy_rows(out.fused_scores, targets)
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / len(step_outputs))


# ---------------------------------------------------------------------------
# score tables and validation metrics


def score_table_from_model(model: RUModel, samples, *, fusion: str | None = None,
                           mode: str = "anticipation", batch_size: int = 64) -> ScoreTable:
    """Evaluation-mode forward over ``samples``, frozen into a table."""
    if not samples:
        raise ContractError("cannot build a score table from no samples")
    cfg = model.config
    protocol = samples[0].protocol
    if protocol == "early_recognition":
        kind = "early_recognition"
        taus = [t / cfg.n_steps for t in cfg.anticipation_steps()]
    else:
        kind = "anticipation"
        taus = cfg.anticipation_taus()
    n = len(samples)
    scores = np.empty((n, len(taus), cfg.n_actions))
    gt = np.empty((n, 3), dtype=np.int64)
    ids = []
    for lo in range(0, n, batch_size):
        chunk = samples[lo:lo + batch_size]
        outputs = model.forward(chunk, fusion=fusion, mode=mode, training=False)
        for s, out in enumerate(outputs):
            scores[lo:lo + len(chunk), s, :] = out.fused_scores.data
        for i, smp in enumerate(chunk):
            a = smp.annotation
            gt[lo + i] = (a.verb_class, a.noun_class, a.action_class)
            ids.append(smp.sample_id)
    return ScoreTable(kind=kind, taus=np.asarray(taus), sample_ids=ids,
                      gt=gt, scores=scores)


def mean_attention_weights(model: RUModel, samples, *, batch_size: int = 64) -> np.ndarray:
    """Per-sample attention weights averaged over anticipation steps, [N, M]."""
    if model.attention is None:
        raise ContractError("model has no attention network")
    n = len(samples)
    out = np.zeros((n, model.config.n_modalities))
    for lo in range(0, n, batch_size):
        chunk = samples[lo:lo + batch_size]
        outputs = model.forward(chunk, fusion="matt", training=False)
        acc = np.zeros((len(chunk), model.config.n_modalities))
        for step in outputs:
            acc += step.fusion_weights.data
        out[lo:lo + len(chunk)] = acc / len(outputs)
    return out


def validation_metric(metric: str, model: RUModel, data: TrainData, *,
                      mode: str, fusion: str | None, at_tau: float = 1.0) -> float:
    """The scalar a stage maximises across epochs."""
    table = score_table_from_model(model, data.val, fusion=fusion, mode=mode)
    if metric == "top5_at_1s":
        if table.kind != "anticipation":
            raise EvaluationError("top5_at_1s needs an anticipation table; "
                                  "use mean_top1_over_rates for early recognition")
        return top_k_accuracy(table, 5, table.step_for_tau(at_tau))
    if metric == "mean_top1_over_rates":
        return float(np.mean([top_k_accuracy(table, 1, s)
                              for s in range(table.n_steps)]))
    raise ParameterError(f"unknown validation metric {metric!r}")


# ---------------------------------------------------------------------------
# the generic stage loop


def _stage_rng(seed: int, code: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, code)))


def _run_stage(stage: str, model: RUModel, params, data: TrainData,
               cfg: TrainConfig, *, mode: str, fusion: str | None,
               epochs: int, seed_code: int,
               val_metric_fn=None) -> TrainReport:
    """Train ``params`` for ``epochs`` epochs; keep the best-epoch weights.

    ``val_metric_fn(model) -> float`` overrides the configured metric, which
    tests use to force specific selection behaviour.
    """
    rng = _stage_rng(cfg.seed, seed_code)
    report = TrainReport(stage=stage)
    t0 = time.monotonic()
    if val_metric_fn is None:
        def val_metric_fn(m):
            return validation_metric(cfg.early_stop_metric, m, data,
                                     mode=mode, fusion=fusion, at_tau=cfg.at_tau)
    for p in params:
        p.momentum_buffer[...] = 0.0
    best_snapshot = None
    n = len(data.train)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            batch = [data.train[i] for i in order[lo:lo + cfg.batch_size]]
            targets = np.array([s.annotation.action_class for s in batch])
            with ad.Tape():
                outputs = model.forward(batch, mode=mode, fusion=fusion,
                                        training=True, rng=rng)
                loss = loss_anticipation(outputs, targets)
                ad.backward(loss)
            ad.sgd_step(params, cfg.lr, cfg.momentum)
            total_loss += float(loss.data) * len(batch)
        report.train_losses.append(total_loss / n)
        metric = float(val_metric_fn(model))
        report.val_metrics.append(metric)
        if metric > report.best_metric:
            report.best_metric = metric
            report.selected_epoch = epoch
            best_snapshot = [p.value.data.copy() for p in params]
    if best_snapshot is not None:
        for p, saved in zip(params, best_snapshot):
            p.value.data = saved
    report.wall_clock_s = time.monotonic() - t0
    return report


# ---------------------------------------------------------------------------
# the three public stages


def train_scp(branch_index: int, model: RUModel, data: TrainData,
              cfg: TrainConfig, *, val_metric_fn=None) -> TrainReport:
    """Sequence-completion pre-training of one branch, alone."""
    if model.arch == ARCH_ENCODER_ONLY:
        raise ContractError("the encoder-only variant has no unrolling stage to pre-train")
    name = model.config.modality_names[branch_index]
    view = single_branch_view(model, branch_index)
    sub = data.select_modality(branch_index)
    report = _run_stage(f"scp[{name}]", view, view.parameters("single:0"), sub, cfg,
                        mode="scp", fusion="single:0",
                        epochs=cfg.scp_epochs_for(name),
                        seed_code=_SEED_SCP_BASE + branch_index,
                        val_metric_fn=val_metric_fn)
    model.stages_done[branch_index].add("scp")
    return report


def train_branch(branch_index: int, model: RUModel, data: TrainData,
                 cfg: TrainConfig, *, val_metric_fn=None) -> TrainReport:
    """Anticipation fine-tuning of one branch, alone."""
    name = model.config.modality_names[branch_index]
    view = single_branch_view(model, branch_index)
    sub = data.select_modality(branch_index)
    report = _run_stage(f"branch[{name}]", view, view.parameters("single:0"), sub, cfg,
                        mode="anticipation", fusion="single:0",
                        epochs=cfg.branch_epochs,
                        seed_code=_SEED_BRANCH_BASE + branch_index,
                        val_metric_fn=val_metric_fn)
    model.stages_done[branch_index].add("branch")
    return report


def train_joint(model: RUModel, data: TrainData, cfg: TrainConfig, *,
                fusion: str = "matt", force: bool = False,
                val_metric_fn=None) -> TrainReport:
    """Joint fine-tuning of all branches plus the attention network.

    Refuses to run on branches that skipped their fine-tuning stage unless
    ``force`` is set; joint training assumes sensible per-branch scores.
    """
    if not force:
        missing = [model.config.modality_names[m]
                   for m, done in enumerate(model.stages_done) if "branch" not in done]
        if missing:
            raise ContractError(
                f"joint stage needs fine-tuned branches; missing: {', '.join(missing)} "
                f"(pass force=True to override)")
    return _run_stage("joint", model, model.parameters(fusion), data, cfg,
                      mode="anticipation", fusion=fusion,
                      epochs=cfg.joint_epochs, seed_code=_SEED_JOINT,
                      val_metric_fn=val_metric_fn)


# ---------------------------------------------------------------------------
# the full pipeline


@dataclass
class PipelineResult:
    model: RUModel
    reports: dict[str, TrainReport]
    table: ScoreTable
    eval_report: dict


def run_pipeline(data: TrainData, model_cfg: ModelConfig, train_cfg: TrainConfig, *,
                 fusion: str = "matt", use_scp: bool = True, arch: str = ARCH_FULL,
                 eval_k: int = 5) -> PipelineResult:
    """Train a model end to end for one fusion mode and evaluate it.

    ``fusion`` selects what gets trained: attention fusion trains every
    branch then the joint stage; late fusion trains every branch and stops;
    ``single:<m>`` trains one branch; early fusion trains one wide branch
    over concatenated features.
    """
    from .evaluation import evaluate

    kind, midx = parse_fusion(fusion)
    if kind == "early":
        cfg_eff = early_fusion_config(model_cfg)
    else:
        cfg_eff = model_cfg
    model = RUModel(cfg_eff, rng=_stage_rng(train_cfg.seed, _SEED_MODEL_INIT),
                    arch=arch, default_fusion=fusion)
    reports: dict[str, TrainReport] = {}

    if kind == "early":
        # one wide branch; the forward pass concatenates sample modalities
        if use_scp and arch == ARCH_FULL:
            r = _run_stage("scp[early]", model, model.parameters("single:0"), data,
                           train_cfg, mode="scp", fusion="early",
                           epochs=train_cfg.scp_epochs, seed_code=_SEED_SCP_BASE,
                           val_metric_fn=None)
            model.stages_done[0].add("scp")
            reports[r.stage] = r
        r = _run_stage("branch[early]", model, model.parameters("single:0"), data,
                       train_cfg, mode="anticipation", fusion="early",
                       epochs=train_cfg.branch_epochs, seed_code=_SEED_BRANCH_BASE)
        model.stages_done[0].add("branch")
        reports[r.stage] = r
    else:
        train_branches = [midx] if kind == "single" else list(range(cfg_eff.n_modalities))
        if use_scp and arch == ARCH_FULL:
            for m in train_branches:
                r = train_scp(m, model, data, train_cfg)
                reports[r.stage] = r
        for m in train_branches:
            r = train_branch(m, model, data, train_cfg)
            reports[r.stage] = r
        if kind == "matt":
            r = train_joint(model, data, train_cfg, fusion="matt")
            reports[r.stage] = r

    table = score_table_from_model(model, data.val, fusion=fusion)
    if table.kind == "early_recognition":
        eval_report = evaluate(table, data.vocab)
    else:
        eval_report = evaluate(table, data.vocab, k=eval_k, at_tau=train_cfg.at_tau)
    eval_report["fusion"] = fusion
    eval_report["arch"] = arch
    return PipelineResult(model=model, reports=reports, table=table,
                          eval_report=eval_report)
