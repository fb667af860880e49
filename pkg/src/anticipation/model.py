"""Recurrent anticipation model.

Per modality there is a *branch*: a rolling LSTM that encodes the observed
feature sequence step by step from a zero initial state, an unrolling LSTM
that takes over the rolling state at an observed step ``t`` and iterates
``n_t = s_ant + s_enc - t + 1`` times, and a linear head mapping the final
unrolled hidden state to action scores.  In anticipation mode the unrolling
LSTM re-reads the feature of step ``t`` at every iteration; in sequence
completion mode it reads the true future features instead, which is only
meaningful during pre-training.

Fusion combines per-branch scores into one vector per step:

* ``"matt"`` - weights from a three-layer attention network over the
  concatenated rolling states of all branches,
* ``"late"`` - fixed uniform weights,
* ``"early"`` - a single branch over the concatenation of all modality
  features (the model must have been built with that one wide branch),
* ``"single:<m>"`` - branch ``m`` alone.

Steps are 1-based.  At step ``t`` the model has observed ``alpha * t``
seconds and the next action starts in ``alpha * (s_enc + s_ant + 1 - t)``
seconds; anticipation outputs cover ``t = s_enc+1 .. s_enc+s_ant``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError, ContractError, DimensionError, ParameterError, RangeError

ARCH_FULL = "ru"
ARCH_ENCODER_ONLY = "bl"

FUSION_KINDS = ("matt", "late", "early", "single")


def parse_fusion(fusion: str) -> tuple[str, int | None]:
    """Split a fusion flag into (kind, branch index or None)."""
    if fusion in ("matt", "late", "early"):
        return fusion, None
    if fusion.startswith("single:"):
        try:
            idx = int(fusion.split(":", 1)[1])
        except ValueError:
            raise ParameterError(f"bad fusion flag {fusion!r}") from None
        if idx < 0:
            raise ParameterError(f"fusion branch index must be >= 0, got {idx}")
        return "single", idx
    raise ParameterError(
        f"unknown fusion {fusion!r}; expected matt, late, early or single:<m>")


@dataclass
class ModelConfig:
    """Shape and timing of the model.

    ``alpha`` is the time step in seconds between consecutive feature
    snapshots; ``s_enc`` steps are encoder-only, the following ``s_ant``
    steps each emit an anticipation.
    """

    modality_dims: tuple[int, ...]
    n_actions: int
    n_verbs: int = 1
    n_nouns: int = 1
    alpha: float = 0.25
    s_enc: int = 6
    s_ant: int = 8
    hidden: int = 1024
    dropout_p: float = 0.8
    modality_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        self.modality_dims = tuple(int(d) for d in self.modality_dims)
        if not self.modality_dims:
            raise ConfigError("modality_dims must not be empty")
        if any(d < 1 for d in self.modality_dims):
            raise ConfigError(f"modality dims must be >= 1, got {self.modality_dims}")
        if self.n_actions < 2:
            raise ConfigError(f"n_actions must be >= 2, got {self.n_actions}")
        if self.n_verbs < 1 or self.n_nouns < 1:
            raise ConfigError("n_verbs and n_nouns must be >= 1")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.s_enc < 0 or self.s_ant < 1:
            raise ConfigError(f"need s_enc >= 0 and s_ant >= 1, got {self.s_enc}, {self.s_ant}")
        if self.hidden < 1:
            raise ConfigError(f"hidden must be >= 1, got {self.hidden}")
        if not (0.0 <= self.dropout_p < 1.0):
            raise ConfigError(f"dropout_p must satisfy 0 <= p < 1, got {self.dropout_p}")
        if self.modality_names is None:
            self.modality_names = tuple(f"m{i}" for i in range(len(self.modality_dims)))
        else:
            self.modality_names = tuple(str(n) for n in self.modality_names)
        if len(self.modality_names) != len(self.modality_dims):
            raise ConfigError("modality_names and modality_dims lengths differ")

    @property
    def n_modalities(self) -> int:
        return len(self.modality_dims)

    @property
    def n_steps(self) -> int:
        return self.s_enc + self.s_ant

    @property
    def observed_length(self) -> float:
        """Seconds of video consumed by a full encoder pass."""
        return self.alpha * self.n_steps

    def anticipation_steps(self) -> range:
        return range(self.s_enc + 1, self.n_steps + 1)

    def anticipation_taus(self) -> list[float]:
        """Anticipation horizons in step order (largest first)."""
        return [step_times(t, self)[1] for t in self.anticipation_steps()]


def unroll_count(t: int, cfg: ModelConfig) -> int:
    """How many unrolling iterations run when anticipating at step ``t``."""
    if not (cfg.s_enc + 1 <= t <= cfg.n_steps):
        raise RangeError(
            f"step {t} outside anticipation window [{cfg.s_enc + 1}, {cfg.n_steps}]")
    return cfg.s_ant + cfg.s_enc - t + 1


def step_times(t: int, cfg: ModelConfig) -> tuple[float, float]:
    """(observed seconds, seconds until the action) at 1-based step ``t``."""
    if not (1 <= t <= cfg.n_steps):
        raise RangeError(f"step {t} outside [1, {cfg.n_steps}]")
    return cfg.alpha * t, cfg.alpha * (cfg.s_enc + cfg.s_ant + 1 - t)


# ---------------------------------------------------------------------------
# parameters


@dataclass
class LstmParams:
    """Gate weights in (input, forget, cell, output) block order."""

    w_input: Parameter
    w_hidden: Parameter
    bias: Parameter

    @property
    def hidden(self) -> int:
        return self.w_hidden.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_input.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.w_input, self.w_hidden, self.bias]


@dataclass
class LstmState:
    h: Tensor
    c: Tensor


def zero_state(hidden: int, batch: int) -> LstmState:
    return LstmState(Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden))))


def init_lstm(input_dim: int, hidden: int, rng: np.random.Generator) -> LstmParams:
    bound = 1.0 / np.sqrt(hidden)
    w_in = Parameter(rng.uniform(-bound, bound, size=(4 * hidden, input_dim)))
    w_hid = Parameter(rng.uniform(-bound, bound, size=(4 * hidden, hidden)))
    bias = np.zeros(4 * hidden)
    bias[hidden:2 * hidden] = 1.0  # open forget gates at the start of training
    return LstmParams(w_in, w_hid, Parameter(bias))


@dataclass
class BranchParams:
    """One modality branch: rolling LSTM, unrolling LSTM, linear head."""

    r_lstm: LstmParams
    u_lstm: LstmParams
    head_w: Parameter
    head_b: Parameter

    @property
    def input_dim(self) -> int:
        return self.r_lstm.input_dim

    @property
    def hidden(self) -> int:
        return self.r_lstm.hidden

    @property
    def n_actions(self) -> int:
        return self.head_w.shape[0]

    def parameters(self, include_unrolling: bool = True) -> list[Parameter]:
        out = self.r_lstm.parameters()
        if include_unrolling:
            out += self.u_lstm.parameters()
        return out + [self.head_w, self.head_b]

    def named_parameters(self, prefix: str) -> list[tuple[str, Parameter]]:
        names = []
        for part, p in (("r_lstm", self.r_lstm), ("u_lstm", self.u_lstm)):
            names += [(f"{prefix}.{part}.w_input", p.w_input),
                      (f"{prefix}.{part}.w_hidden", p.w_hidden),
                      (f"{prefix}.{part}.bias", p.bias)]
        names += [(f"{prefix}.head_w", self.head_w), (f"{prefix}.head_b", self.head_b)]
        return names


def init_branch(input_dim: int, hidden: int, n_actions: int,
                rng: np.random.Generator) -> BranchParams:
    bound = 1.0 / np.sqrt(hidden)
    return BranchParams(
        r_lstm=init_lstm(input_dim, hidden, rng),
        u_lstm=init_lstm(input_dim, hidden, rng),
        head_w=Parameter(rng.uniform(-bound, bound, size=(n_actions, hidden))),
        head_b=Parameter(np.zeros(n_actions)),
    )


@dataclass
class AttentionParams:
    """Three-layer scorer over concatenated rolling states of all branches."""

    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter
    w3: Parameter
    b3: Parameter

    @property
    def n_modalities(self) -> int:
        return self.w3.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def named_parameters(self, prefix: str = "attention") -> list[tuple[str, Parameter]]:
        return [(f"{prefix}.{n}", p) for n, p in
                (("w1", self.w1), ("b1", self.b1), ("w2", self.w2),
                 ("b2", self.b2), ("w3", self.w3), ("b3", self.b3))]


def init_attention(n_modalities: int, hidden: int, rng: np.random.Generator) -> AttentionParams:
    # Input is every branch's (h, c) pair; hidden layers shrink by 4 then 8.
    d_in = n_modalities * 2 * hidden
    d1 = max(1, d_in // 4)
    d2 = max(1, d_in // 8)

    def lin(n_out, n_in):
        bound = 1.0 / np.sqrt(n_in)
        return (Parameter(rng.uniform(-bound, bound, size=(n_out, n_in))),
                Parameter(np.zeros(n_out)))

    w1, b1 = lin(d1, d_in)
    w2, b2 = lin(d2, d1)
    w3, b3 = lin(n_modalities, d2)
    return AttentionParams(w1, b1, w2, b2, w3, b3)


# ---------------------------------------------------------------------------
# forward pieces


def _dropped(x: Tensor, p: float, training: bool, rng) -> Tensor:
    if not training or p <= 0.0:
        return x
    return ad.dropout(x, p, True, rng)


def lstm_step(params: LstmParams, x: Tensor, state: LstmState) -> LstmState:
    """One LSTM cell evaluation over a batch of input rows."""
    hdim = params.hidden
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise DimensionError(
            f"lstm_step input {x.shape} does not match weights for dim {params.input_dim}")
    batch = x.shape[0]
    if state.h.shape != (batch, hdim) or state.c.shape != (batch, hdim):
        raise DimensionError(
            f"lstm_step state shapes {state.h.shape}/{state.c.shape} "
            f"do not match batch {batch}, hidden {hdim}")
    z = ad.bias_add(
        ad.add(ad.matmul(x, ad.transpose(params.w_input.value)),
               ad.matmul(state.h, ad.transpose(params.w_hidden.value))),
        params.bias.value)
    gate_i = ad.sigmoid(ad.slice_cols(z, 0, hdim))
    gate_f = ad.sigmoid(ad.slice_cols(z, hdim, 2 * hdim))
    gate_g = ad.tanh(ad.slice_cols(z, 2 * hdim, 3 * hdim))
    gate_o = ad.sigmoid(ad.slice_cols(z, 3 * hdim, 4 * hdim))
    c = ad.add(ad.mul(gate_f, state.c), ad.mul(gate_i, gate_g))
    h = ad.mul(gate_o, ad.tanh(c))
    return LstmState(h, c)


def rolling_encode(branch: BranchParams, features: Sequence[Tensor], *,
                   dropout_p: float = 0.0, training: bool = False,
                   rng=None) -> list[LstmState]:
    """Encode a feature sequence recursively from the zero state.

    Returns one state per input step; state ``i`` depends only on features
    ``0..i``.
    """
    if not features:
        raise ContractError("rolling_encode needs at least one feature step")
    state = zero_state(branch.hidden, features[0].shape[0])
    states = []
    for x in features:
        state = lstm_step(branch.r_lstm, _dropped(x, dropout_p, training, rng), state)
        states.append(state)
    return states


def _head(branch: BranchParams, h: Tensor, *, dropout_p: float,
          training: bool, rng) -> Tensor:
    h = _dropped(h, dropout_p, training, rng)
    return ad.bias_add(ad.matmul(h, ad.transpose(branch.head_w.value)),
                       branch.head_b.value)


def unroll_anticipate(branch: BranchParams, f_t: Tensor, state: LstmState,
                      n_t: int, *, dropout_p: float = 0.0, training: bool = False,
                      rng=None, on_step: Callable[[], None] | None = None) -> Tensor:
    """Iterate the unrolling LSTM ``n_t`` times on the fixed input ``f_t``.

    The state handed over from the rolling encoder is the starting state;
    the head reads the final hidden state.
    """
    if n_t < 1:
        raise RangeError(f"unroll count must be >= 1, got {n_t}")
    for _ in range(n_t):
        state = lstm_step(branch.u_lstm, _dropped(f_t, dropout_p, training, rng), state)
        if on_step is not None:
            on_step()
    return _head(branch, state.h, dropout_p=dropout_p, training=training, rng=rng)


def scp_unroll(branch: BranchParams, future_features: Sequence[Tensor],
               state: LstmState, *, dropout_p: float = 0.0, training: bool = False,
               rng=None, on_step: Callable[[], None] | None = None) -> Tensor:
    """Sequence-completion variant: the unrolling LSTM reads true future steps."""
    if not future_features:
        raise ContractError("scp_unroll needs at least one future feature step")
    for x in future_features:
        state = lstm_step(branch.u_lstm, _dropped(x, dropout_p, training, rng), state)
        if on_step is not None:
            on_step()
    return _head(branch, state.h, dropout_p=dropout_p, training=training, rng=rng)


def attention_weights(matt: AttentionParams, states: Sequence[LstmState], *,
                      dropout_p: float = 0.0, training: bool = False, rng=None) -> Tensor:
    """Per-sample fusion weights (rows sum to one) from the rolling states."""
    if len(states) != matt.n_modalities:
        raise ContractError(
            f"attention built for {matt.n_modalities} branches, got {len(states)} states")
    pieces = []
    for s in states:
        pieces += [s.h, s.c]
    x = ad.concat(pieces, axis=1)
    if x.shape[1] != matt.input_dim:
        raise DimensionError(
            f"attention input dim {x.shape[1]} does not match weights ({matt.input_dim})")
    a1 = ad.relu(ad.bias_add(ad.matmul(x, ad.transpose(matt.w1.value)), matt.b1.value))
    a1 = _dropped(a1, dropout_p, training, rng)
    a2 = ad.relu(ad.bias_add(ad.matmul(a1, ad.transpose(matt.w2.value)), matt.b2.value))
    a2 = _dropped(a2, dropout_p, training, rng)
    logits = ad.bias_add(ad.matmul(a2, ad.transpose(matt.w3.value)), matt.b3.value)
    return ad.softmax(logits)


def fuse(modality_scores: Sequence[Tensor], weights: Tensor) -> Tensor:
    """Weighted sum of per-branch score matrices, weights per sample and branch."""
    if weights.ndim != 2 or weights.shape[1] != len(modality_scores):
        raise ContractError(
            f"weights {weights.shape} do not match {len(modality_scores)} score blocks")
    fused = None
    for m, scores in enumerate(modality_scores):
        term = ad.scale_rows(scores, ad.slice_cols(weights, m, m + 1))
        fused = term if fused is None else ad.add(fused, term)
    return fused


@dataclass
class StepOutput:
    """Everything the model emits for one anticipation step."""

    t: int
    tau_o: float
    tau_a: float
    modality_scores: list[Tensor]
    fusion_weights: Tensor
    fused_scores: Tensor


@dataclass
class ForwardTap:
    """Instrumentation hook: counts actual unrolling cell evaluations per
    (step, branch) and records the 1-based step indices consumed by
    sequence-completion unrolls."""

    u_steps: dict[tuple[int, int], int] = field(default_factory=dict)
    scp_inputs: dict[int, list[int]] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# the model


class RUModel:
    """Multi-branch rolling/unrolling model with score fusion.

    ``arch`` selects the full model (``"ru"``) or an encoder-only variant
    (``"bl"``) whose head reads the rolling state directly; the latter exists
    as an ablation baseline and ignores the unrolling parameters entirely.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None,
                 arch: str = ARCH_FULL, branches: list[BranchParams] | None = None,
                 attention: AttentionParams | None = None,
                 default_fusion: str | None = None) -> None:
        if arch not in (ARCH_FULL, ARCH_ENCODER_ONLY):
            raise ConfigError(f"unknown arch {arch!r}")
        self.config = config
        self.arch = arch
        if branches is not None:
            if len(branches) != config.n_modalities:
                raise ConfigError("branch list does not match modality count")
            for b, d in zip(branches, config.modality_dims):
                if b.input_dim != d or b.hidden != config.hidden:
                    raise ConfigError("branch shapes do not match the config")
            self.branches = branches
            self.attention = attention
        else:
            if rng is None:
                rng = np.random.default_rng(0)
            self.branches = [init_branch(d, config.hidden, config.n_actions, rng)
                             for d in config.modality_dims]
            self.attention = (init_attention(config.n_modalities, config.hidden, rng)
                              if config.n_modalities > 1 else None)
        if default_fusion is None:
            default_fusion = "matt" if self.attention is not None else "single:0"
        self.default_fusion = default_fusion
        # Which training stages each branch has been through; the joint stage
        # refuses to run on branches that skipped fine-tuning unless forced.
        self.stages_done: list[set[str]] = [set() for _ in self.branches]

    # -- parameter access ---------------------------------------------------

    def parameters(self, fusion: str | None = None) -> list[Parameter]:
        """Trainable parameters for the given fusion mode (default: all)."""
        include_u = self.arch == ARCH_FULL
        kind, midx = parse_fusion(fusion) if fusion is not None else (None, None)
        if kind == "single":
            self._check_branch_index(midx)
            return self.branches[midx].parameters(include_unrolling=include_u)
        params: list[Parameter] = []
        for b in self.branches:
            params += b.parameters(include_unrolling=include_u)
        if self.attention is not None and kind in (None, "matt"):
            params += self.attention.parameters()
        return params

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        out: list[tuple[str, Parameter]] = []
        for m, b in enumerate(self.branches):
            out += b.named_parameters(f"branch{m}")
        if self.attention is not None:
            out += self.attention.named_parameters()
        return out

    def _check_branch_index(self, midx: int) -> None:
        if midx >= len(self.branches):
            raise ParameterError(
                f"fusion single:{midx} but the model has {len(self.branches)} branches")

    # -- forward ------------------------------------------------------------

    def forward(self, samples, *, mode: str = "anticipation", fusion: str | None = None,
                training: bool = False, rng=None, tap: ForwardTap | None = None
                ) -> list[StepOutput]:
        """Run the model over a batch of samples.

        Returns one :class:`StepOutput` per anticipation step, in step order.
        ``mode`` is ``"anticipation"`` or ``"scp"`` (sequence completion);
        sequence completion is a pre-training wiring and cannot be combined
        with attention fusion, which is unused during pre-training.
        """
        cfg = self.config
        if fusion is None:
            fusion = self.default_fusion
        kind, midx = parse_fusion(fusion)
        if mode not in ("anticipation", "scp"):
            raise ParameterError(f"unknown mode {mode!r}")
        if mode == "scp" and kind == "matt":
            raise ContractError("sequence completion pre-trains branches alone; "
                                "attention fusion is not defined for it")
        if mode == "scp" and self.arch == ARCH_ENCODER_ONLY:
            raise ContractError("the encoder-only variant has no unrolling stage "
                                "to pre-train")
        if training and cfg.dropout_p > 0.0 and rng is None:
            raise ContractError("training forward with dropout needs an rng")
        if kind == "matt" and self.attention is None:
            raise ContractError("model has no attention network; "
                                "was it built with a single modality?")
        if kind == "early" and cfg.n_modalities != 1:
            raise ContractError("early fusion needs a model built with one "
                                "concatenated branch")
        if kind == "single":
            self._check_branch_index(midx)

        feats = _stack_features(samples, cfg, concat_all=(kind == "early"))
        if kind == "single":
            active = [midx]
        elif kind in ("early",):
            active = [0]
        else:
            active = list(range(cfg.n_modalities))

        drop = cfg.dropout_p
        step_feats: dict[int, list[Tensor]] = {}
        states: dict[int, list[LstmState]] = {}
        for m in active:
            xs = [Tensor(feats[m][:, t, :]) for t in range(cfg.n_steps)]
            step_feats[m] = xs
            states[m] = rolling_encode(self.branches[m], xs, dropout_p=drop,
                                       training=training, rng=rng)

        batch = feats[0].shape[0]
        outputs: list[StepOutput] = []
        for t in cfg.anticipation_steps():
            n_t = unroll_count(t, cfg)
            tau_o, tau_a = step_times(t, cfg)
            scores = []
            for m in active:
                branch = self.branches[m]
                counter = _StepCounter(tap, t, m)
                if self.arch == ARCH_ENCODER_ONLY:
                    s = _head(branch, states[m][t - 1].h, dropout_p=drop,
                              training=training, rng=rng)
                elif mode == "anticipation":
                    s = unroll_anticipate(branch, step_feats[m][t - 1], states[m][t - 1],
                                          n_t, dropout_p=drop, training=training,
                                          rng=rng, on_step=counter)
                else:
                    future = step_feats[m][t - 1:t - 1 + n_t]
                    if tap is not None:
                        tap.scp_inputs.setdefault(t, list(range(t, t + n_t)))
                    s = scp_unroll(branch, future, states[m][t - 1], dropout_p=drop,
                                   training=training, rng=rng, on_step=counter)
                scores.append(s)
            if kind == "matt":
                weights = attention_weights(self.attention,
                                            [states[m][t - 1] for m in active],
                                            dropout_p=drop, training=training, rng=rng)
            elif kind == "late":
                weights = Tensor(np.full((batch, len(active)), 1.0 / len(active)))
            else:
                weights = Tensor(np.ones((batch, 1)))
            fused = fuse(scores, weights)
            outputs.append(StepOutput(t=t, tau_o=tau_o, tau_a=tau_a,
                                      modality_scores=scores, fusion_weights=weights,
                                      fused_scores=fused))
        return outputs

    def predict_at(self, sample, tau_a: float, *, fusion: str | None = None) -> np.ndarray:
        """Fused action scores for one sample at anticipation horizon ``tau_a``."""
        taus = self.config.anticipation_taus()
        match = [i for i, v in enumerate(taus) if abs(v - tau_a) < 1e-9]
        if not match:
            raise ParameterError(
                f"tau_a={tau_a} not on the anticipation grid {[round(v, 4) for v in taus]}")
        outputs = self.forward([sample], fusion=fusion, training=False)
        return outputs[match[0]].fused_scores.data[0].copy()


class _StepCounter:
    """Counts unrolling cell evaluations into a tap, if one is given."""

    def __init__(self, tap: ForwardTap | None, t: int, m: int) -> None:
        self.tap = tap
        self.key = (t, m)

    def __call__(self) -> None:
        if self.tap is not None:
            self.tap.u_steps[self.key] = self.tap.u_steps.get(self.key, 0) + 1


def _stack_features(samples, cfg: ModelConfig, *, concat_all: bool) -> list[np.ndarray]:
    """Validate a sample batch and stack it into per-modality [B, T, D] arrays."""
    if not samples:
        raise ContractError("forward needs at least one sample")
    stacked: list[np.ndarray] = []
    first = samples[0]
    n_in = len(first.features)
    for s in samples:
        if len(s.features) != n_in:
            raise ContractError("samples in a batch have differing modality counts")
    if concat_all:
        rows = [np.concatenate([np.asarray(f, dtype=np.float64) for f in s.features], axis=1)
                for s in samples]
        _check_rows(rows, cfg.n_steps, cfg.modality_dims[0], "concatenated")
        return [np.stack(rows)]
    if n_in != cfg.n_modalities:
        raise ContractError(
            f"samples carry {n_in} modalities but the model expects {cfg.n_modalities}")
    for m in range(cfg.n_modalities):
        rows = [np.asarray(s.features[m], dtype=np.float64) for s in samples]
        _check_rows(rows, cfg.n_steps, cfg.modality_dims[m], cfg.modality_names[m])
        stacked.append(np.stack(rows))
    return stacked


def _check_rows(rows: list[np.ndarray], n_steps: int, dim: int, name: str) -> None:
    for r in rows:
        if r.ndim != 2 or r.shape != (n_steps, dim):
            raise ContractError(
                f"modality {name!r} sample has shape {r.shape}, expected ({n_steps}, {dim})")


def early_fusion_config(cfg: ModelConfig) -> ModelConfig:
    """Config for a single wide branch over all concatenated modalities."""
    return replace(cfg, modality_dims=(sum(cfg.modality_dims),),
                   modality_names=("+".join(cfg.modality_names),))


def single_branch_view(model: RUModel, m: int) -> RUModel:
    """A one-branch view sharing parameters with branch ``m`` of ``model``."""
    cfg = model.config
    if not (0 <= m < cfg.n_modalities):
        raise ParameterError(f"branch index {m} out of range for {cfg.n_modalities}")
    view_cfg = replace(cfg, modality_dims=(cfg.modality_dims[m],),
                       modality_names=(cfg.modality_names[m],))
    return RUModel(view_cfg, arch=model.arch, branches=[model.branches[m]],
                   attention=None, default_fusion="single:0")
