"""Metrics over frozen score tables.

Evaluation is decoupled from the model: a :class:`ScoreTable` holds raw
fused scores for every sample and step, and every metric is a pure function
of a table (plus the vocabulary for verb/noun views).  Rank metrics break
score ties towards the lower class id, so results are reproducible whatever
produced the scores.

Conventions: accuracies and recalls are percentages in [0, 100]; times are
seconds.  For anticipation tables the step axis is labelled with the
anticipation horizon tau_a (decreasing); for early recognition it is
labelled with the observation rate (increasing fraction of the action seen).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError, EvaluationError, ParameterError


@dataclass
class ActionVocabulary:
    """Total maps from action ids to verb and noun ids, plus many-shot sets."""

    action_to_verb: np.ndarray
    action_to_noun: np.ndarray
    many_shot_verbs: list[int] = field(default_factory=list)
    many_shot_nouns: list[int] = field(default_factory=list)
    many_shot_actions: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.action_to_verb = np.asarray(self.action_to_verb, dtype=np.int64)
        self.action_to_noun = np.asarray(self.action_to_noun, dtype=np.int64)
        if self.action_to_verb.shape != self.action_to_noun.shape or \
                self.action_to_verb.ndim != 1:
            raise DimensionError("verb and noun maps must be 1-D and equally long")
        if len(self.action_to_verb) == 0:
            raise DataError("empty action vocabulary")
        if self.action_to_verb.min() < 0 or self.action_to_noun.min() < 0:
            raise DataError("negative verb or noun id in the vocabulary")
        pairs = list(zip(self.action_to_verb.tolist(), self.action_to_noun.tolist()))
        if len(set(pairs)) != len(pairs):
            raise DataError("two actions map to the same (verb, noun) pair")
        self.many_shot_verbs = sorted(int(v) for v in self.many_shot_verbs)
        self.many_shot_nouns = sorted(int(v) for v in self.many_shot_nouns)
        self.many_shot_actions = sorted(int(v) for v in self.many_shot_actions)

    @property
    def n_actions(self) -> int:
        return len(self.action_to_verb)

    @property
    def n_verbs(self) -> int:
        return int(self.action_to_verb.max()) + 1

    @property
    def n_nouns(self) -> int:
        return int(self.action_to_noun.max()) + 1

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump({
                "action_to_verb": self.action_to_verb.tolist(),
                "action_to_noun": self.action_to_noun.tolist(),
                "many_shot_verbs": self.many_shot_verbs,
                "many_shot_nouns": self.many_shot_nouns,
                "many_shot_actions": self.many_shot_actions,
            }, f, indent=1, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path: str) -> "ActionVocabulary":
        from .errors import ParseError
        try:
            with open(path) as f:
                d = json.load(f)
            return cls(action_to_verb=d["action_to_verb"],
                       action_to_noun=d["action_to_noun"],
                       many_shot_verbs=d.get("many_shot_verbs", []),
                       many_shot_nouns=d.get("many_shot_nouns", []),
                       many_shot_actions=d.get("many_shot_actions", []))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
            raise ParseError(f"{path}: not a vocabulary file ({e})") from None


_TABLE_KINDS = ("anticipation", "early_recognition")


@dataclass
class ScoreTable:
    """Raw scores for N samples at T steps over C classes.

    ``axis`` records what the class dimension means ("action" for raw model
    output; "verb"/"noun" after marginalisation).  ``gt`` carries the
    (verb, noun, action) ground truth per sample regardless of axis.
    """

    kind: str
    taus: np.ndarray          # float64 [T], the step labels
    sample_ids: list[str]
    gt: np.ndarray            # int64 [N, 3] columns verb, noun, action
    scores: np.ndarray        # float64 [N, T, C]
    axis: str = "action"

    def __post_init__(self) -> None:
        self.taus = np.asarray(self.taus, dtype=np.float64)
        self.gt = np.asarray(self.gt, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.kind not in _TABLE_KINDS:
            raise ParameterError(f"unknown table kind {self.kind!r}")
        if self.axis not in ("verb", "noun", "action"):
            raise ParameterError(f"unknown table axis {self.axis!r}")
        n, t = len(self.sample_ids), len(self.taus)
        if self.scores.shape[:2] != (n, t) or self.scores.ndim != 3:
            raise DimensionError(
                f"scores shape {self.scores.shape} does not match "
                f"{n} samples x {t} steps")
        if self.gt.shape != (n, 3):
            raise DimensionError(f"gt shape {self.gt.shape}, expected ({n}, 3)")
        if n == 0:
            raise DataError("empty score table")
        if not np.all(np.isfinite(self.scores)):
            raise DataError("non-finite scores in the table")

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def n_steps(self) -> int:
        return len(self.taus)

    @property
    def n_classes(self) -> int:
        return self.scores.shape[2]

    def gt_for_axis(self) -> np.ndarray:
        return self.gt[:, ("verb", "noun", "action").index(self.axis)]

    def step_for_tau(self, tau: float) -> int:
        hits = np.flatnonzero(np.abs(self.taus - tau) < 1e-9)
        if len(hits) == 0:
            raise EvaluationError(
                f"no step at tau={tau}; table has {[round(v, 4) for v in self.taus]}")
        return int(hits[0])

    def derive(self, axis: str, vocab: ActionVocabulary) -> "ScoreTable":
        """Verb or noun view of an action table via marginalisation."""
        if self.axis != "action":
            raise EvaluationError(f"cannot derive {axis!r} from a {self.axis!r} table")
        out = np.empty((self.n_samples, self.n_steps,
                        vocab.n_verbs if axis == "verb" else vocab.n_nouns))
        for i in range(self.n_samples):
            for s in range(self.n_steps):
                out[i, s] = marginalize(self.scores[i, s], vocab, axis)
        return ScoreTable(kind=self.kind, taus=self.taus.copy(),
                          sample_ids=list(self.sample_ids), gt=self.gt.copy(),
                          scores=out, axis=axis)

    # -- CSV persistence ----------------------------------------------------

    def save_csv(self, path: str) -> None:
        import csv
        label = "tau_a" if self.kind == "anticipation" else "rate"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["sample_id", "step", label, "gt_verb", "gt_noun", "gt_action"]
                       + [f"score_{c}" for c in range(self.n_classes)])
            for i, sid in enumerate(self.sample_ids):
                for s in range(self.n_steps):
                    w.writerow([sid, s, repr(float(self.taus[s])),
                                *(int(v) for v in self.gt[i])]
                               + [repr(float(v)) for v in self.scores[i, s]])

    @classmethod
    def load_csv(cls, path: str, kind: str = "anticipation",
                 axis: str = "action") -> "ScoreTable":
        import csv
        from .errors import ParseError
        rows = []
        try:
            with open(path, newline="") as f:
                reader = csv.reader(f)
                header = next(reader, None)
                if not header or header[0] != "sample_id":
                    raise ParseError(f"{path}: not a score table")
                n_classes = len(header) - 6
                if n_classes < 1:
                    raise ParseError(f"{path}: no score columns")
                for lineno, rec in enumerate(reader, start=2):
                    if len(rec) != len(header):
                        raise ParseError(f"{path}:{lineno}: field count mismatch")
                    rows.append(rec)
        except OSError as e:
            raise ParseError(f"{path}: cannot read ({e})") from e
        if not rows:
            raise ParseError(f"{path}: empty score table")
        ids: list[str] = []
        id_index: dict[str, int] = {}
        for rec in rows:
            if rec[0] not in id_index:
                id_index[rec[0]] = len(ids)
                ids.append(rec[0])
        steps = sorted({int(rec[1]) for rec in rows})
        if steps != list(range(len(steps))):
            raise ParseError(f"{path}: non-contiguous step indices")
        taus = np.zeros(len(steps))
        gt = np.zeros((len(ids), 3), dtype=np.int64)
        scores = np.zeros((len(ids), len(steps), n_classes))
        try:
            for rec in rows:
                i, s = id_index[rec[0]], int(rec[1])
                taus[s] = float(rec[2])
                gt[i] = [int(rec[3]), int(rec[4]), int(rec[5])]
                scores[i, s] = [float(v) for v in rec[6:]]
        except ValueError as e:
            raise ParseError(f"{path}: {e}") from None
        return cls(kind=kind, taus=taus, sample_ids=ids, gt=gt, scores=scores, axis=axis)


# ---------------------------------------------------------------------------
# rank helpers


def _top_k_sets(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best classes per row; ties go to the lower class id."""
    order = np.argsort(-scores, axis=-1, kind="stable")
    return order[..., :k]


def _check_k(k: int, n_classes: int) -> None:
    if not (1 <= k <= n_classes):
        raise ParameterError(f"k={k} outside [1, {n_classes}]")


# ---------------------------------------------------------------------------
# metrics


def top_k_accuracy(table: ScoreTable, k: int, step: int) -> float:
    """Percentage of samples whose ground truth is in the top-k at ``step``."""
    _check_k(k, table.n_classes)
    if not (0 <= step < table.n_steps):
        raise EvaluationError(f"step {step} outside [0, {table.n_steps})")
    gts = table.gt_for_axis()
    top = _top_k_sets(table.scores[:, step, :], k)
    hits = (top == gts[:, None]).any(axis=1)
    return 100.0 * int(hits.sum()) / table.n_samples


def mean_top_k_recall(table: ScoreTable, k: int, step: int,
                      class_set) -> float:
    """Macro-average top-k recall over ``class_set``; classes with no
    ground-truth samples at all are skipped."""
    _check_k(k, table.n_classes)
    if not (0 <= step < table.n_steps):
        raise EvaluationError(f"step {step} outside [0, {table.n_steps})")
    gts = table.gt_for_axis()
    top = _top_k_sets(table.scores[:, step, :], k)
    hits = (top == gts[:, None]).any(axis=1)
    recalls = []
    for c in sorted(int(c) for c in class_set):
        mask = gts == c
        if not mask.any():
            continue
        recalls.append(100.0 * int(hits[mask].sum()) / int(mask.sum()))
    if not recalls:
        raise EvaluationError("no class of the requested set appears in the table")
    return float(np.mean(recalls))


def time_to_action(sample_scores: np.ndarray, gt: int, taus: np.ndarray, k: int) -> float:
    """Largest anticipation horizon at which the ground truth is in the
    top-k, or 0.0 if it never is."""
    sample_scores = np.asarray(sample_scores, dtype=np.float64)
    if sample_scores.ndim != 2 or sample_scores.shape[0] != len(taus):
        raise DimensionError(
            f"sample scores {sample_scores.shape} do not match {len(taus)} steps")
    _check_k(k, sample_scores.shape[1])
    best = 0.0
    for s in range(sample_scores.shape[0]):
        if gt in _top_k_sets(sample_scores[s], k):
            best = max(best, float(taus[s]))
    return best


def mean_tta(table: ScoreTable, k: int) -> float:
    """Mean :func:`time_to_action` over all samples of an anticipation table."""
    if table.kind != "anticipation":
        raise EvaluationError("time to action is only defined for anticipation tables")
    gts = table.gt_for_axis()
    vals = [time_to_action(table.scores[i], int(gts[i]), table.taus, k)
            for i in range(table.n_samples)]
    return float(np.mean(vals))


def marginalize(action_scores: np.ndarray, vocab: ActionVocabulary, axis: str) -> np.ndarray:
    """Softmax action scores, then sum probabilities per verb (or noun) id."""
    if axis not in ("verb", "noun"):
        raise ParameterError(f"axis must be verb or noun, got {axis!r}")
    action_scores = np.asarray(action_scores, dtype=np.float64)
    if action_scores.ndim != 1:
        raise DimensionError(f"need a 1-D score vector, got {action_scores.shape}")
    amap = vocab.action_to_verb if axis == "verb" else vocab.action_to_noun
    if len(action_scores) > len(amap):
        raise DataError(
            f"{len(action_scores)} action scores but the vocabulary maps only {len(amap)}")
    z = action_scores - action_scores.max()
    e = np.exp(z)
    probs = e / e.sum()
    out = np.zeros(int(amap.max()) + 1)
    for a, p in enumerate(probs):
        out[amap[a]] += p
    return out


# ---------------------------------------------------------------------------
# the full report


def evaluate(table: ScoreTable, vocab: ActionVocabulary, *, k: int = 5,
             at_tau: float = 1.0) -> dict:
    """Standard metric battery for one score table.

    Anticipation tables get top-k action accuracy across the horizon grid
    plus top-k accuracy, many-shot mean top-k recall and mean time-to-action
    for the verb/noun/action views at ``at_tau``.  Early-recognition tables
    get top-1 accuracy per observation rate.
    """
    if table.axis != "action":
        raise EvaluationError("evaluate expects a raw action table")
    if table.n_classes != vocab.n_actions:
        raise DataError(
            f"table has {table.n_classes} classes, vocabulary {vocab.n_actions}")
    if table.kind == "early_recognition":
        by_rate = {f"{table.taus[s]:.4f}": top_k_accuracy(table, 1, s)
                   for s in range(table.n_steps)}
        return {
            "kind": table.kind,
            "n_samples": table.n_samples,
            "top1_action_accuracy_by_rate": by_rate,
            "mean_top1_over_rates": float(np.mean(list(by_rate.values()))),
        }

    views = {
        "action": (table, vocab.many_shot_actions),
        "verb": (table.derive("verb", vocab), vocab.many_shot_verbs),
        "noun": (table.derive("noun", vocab), vocab.many_shot_nouns),
    }
    step = table.step_for_tau(at_tau)
    report: dict = {
        "kind": table.kind,
        "n_samples": table.n_samples,
        "k": k,
        "at_tau": at_tau,
        f"top{k}_action_accuracy_by_tau": {
            f"{table.taus[s]:.2f}": top_k_accuracy(table, k, s)
            for s in range(table.n_steps)},
    }
    # a derived view can have fewer classes than k; score it at the largest
    # supportable cutoff instead of refusing the whole report
    for group, fn in ((f"top{k}_accuracy_at_tau",
                       lambda tb, ms, kk: top_k_accuracy(tb, kk, step)),
                      (f"mean_top{k}_recall_at_tau",
                       lambda tb, ms, kk: mean_top_k_recall(tb, kk, step, ms)),
                      (f"mean_tta{k}", lambda tb, ms, kk: mean_tta(tb, kk))):
        report[group] = {name: fn(tb, ms, min(k, tb.n_classes))
                         for name, (tb, ms) in views.items()}
    return report


def format_report(report: dict) -> str:
    """Fixed-width text rendering of an :func:`evaluate` report."""
    lines = []
    if report["kind"] == "early_recognition":
        by_rate = report["top1_action_accuracy_by_rate"]
        lines.append("Early recognition: top-1 action accuracy % by observation rate")
        lines.append("  " + "  ".join(f"{float(r):>7.3f}" for r in by_rate))
        lines.append("  " + "  ".join(f"{v:>7.2f}" for v in by_rate.values()))
        lines.append(f"mean over rates: {report['mean_top1_over_rates']:.2f}")
        return "\n".join(lines)
    k = report["k"]
    by_tau = report[f"top{k}_action_accuracy_by_tau"]
    lines.append(f"Top-{k} action accuracy % by anticipation horizon (s)")
    lines.append("  " + "  ".join(f"{float(t):>6.2f}" for t in by_tau))
    lines.append("  " + "  ".join(f"{v:>6.2f}" for v in by_tau.values()))
    lines.append(f"At tau_a = {report['at_tau']:.2f} s:")
    header = f"  {'':<24}{'verb':>8}{'noun':>8}{'action':>8}"
    lines.append(header)
    for label, key in ((f"top-{k} accuracy %", f"top{k}_accuracy_at_tau"),
                       (f"mean top-{k} recall %", f"mean_top{k}_recall_at_tau"),
                       (f"mean TtA({k}) s", f"mean_tta{k}")):
        row = report[key]
        lines.append(f"  {label:<24}" + "".join(f"{row[a]:>8.2f}"
                                                for a in ("verb", "noun", "action")))
    return "\n".join(lines)


def save_report(report: dict, path: str) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)
        f.write("\n")
