"""Scikit-learn style facade over the staged pipeline.

The underlying trainer wants timelines, annotations and a staged schedule;
this wrapper accepts plain arrays and hides the staging, so the model can
sit in sklearn model-selection tooling.  ``X`` is a list with one array per
modality, each shaped ``[n_samples, n_steps, dim]`` (a single array is
treated as one modality); ``y`` is the per-sample class label.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_random_state

from .errors import DimensionError, ParameterError
from .evaluation import ActionVocabulary
from .features import ActionAnnotation, Sample
from .model import ModelConfig
from .training import TrainConfig, TrainData, run_pipeline, score_table_from_model


class RUAnticipator(BaseEstimator):
    """Multi-modal sequence anticipation estimator.

    Parameters
    ----------
    hidden : int, default=32
        LSTM state size of every branch.
    fusion : str, default="matt"
        "matt", "late", "early" or "single:<m>".
    use_scp : bool, default=True
        Run sequence-completion pre-training before fine-tuning.
    alpha : float, default=0.25
        Seconds per time step (only affects reported horizons).
    s_enc, s_ant : int
        Encoder-only steps and anticipation steps; their sum must equal the
        time axis of ``X``.
    dropout : float, default=0.1
        Dropout rate on LSTM and head inputs during training.
    lr, momentum, batch_size : SGD settings.
    scp_epochs, branch_epochs, joint_epochs : stage lengths.
    validation_fraction : float, default=0.25
        Trailing fraction of the (shuffled) data held out for the per-stage
        early stopping metric.
    random_state : int or None
        Seeds shuffling, initialisation and dropout.

    Attributes
    ----------
    model_ : the trained recurrent model
    classes_ : sorted original class labels
    reports_ : per-stage training reports
    n_features_in_ : total feature dim across modalities
    """

    def __init__(self, hidden: int = 32, fusion: str = "matt", use_scp: bool = True,
                 alpha: float = 0.25, s_enc: int = 6, s_ant: int = 8,
                 dropout: float = 0.1, lr: float = 0.1, momentum: float = 0.9,
                 batch_size: int = 32, scp_epochs: int = 5, branch_epochs: int = 8,
                 joint_epochs: int = 10, validation_fraction: float = 0.25,
                 random_state: int | None = None) -> None:
        self.hidden = hidden
        self.fusion = fusion
        self.use_scp = use_scp
        self.alpha = alpha
        self.s_enc = s_enc
        self.s_ant = s_ant
        self.dropout = dropout
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.scp_epochs = scp_epochs
        self.branch_epochs = branch_epochs
        self.joint_epochs = joint_epochs
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    # -- input handling -------------------------------------------------

    def _validate_X(self, X, *, fitted: bool) -> list[np.ndarray]:
        if isinstance(X, np.ndarray):
            X = [X]
        if not isinstance(X, (list, tuple)) or not X:
            raise DimensionError("X must be an array or a non-empty list of arrays")
        mats = []
        n, t = None, self.s_enc + self.s_ant
        for m, arr in enumerate(X):
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim != 3:
                raise DimensionError(
                    f"modality {m} must be [n_samples, n_steps, dim], got {arr.shape}")
            if n is None:
                n = arr.shape[0]
            if arr.shape[0] != n:
                raise DimensionError(
                    f"modality {m} has {arr.shape[0]} samples, expected {n}")
            if arr.shape[1] != t:
                raise DimensionError(
                    f"modality {m} has {arr.shape[1]} steps, expected s_enc+s_ant={t}")
            if not np.all(np.isfinite(arr)):
                raise DimensionError(f"modality {m} contains non-finite values")
            mats.append(arr)
        if fitted:
            dims = tuple(a.shape[2] for a in mats)
            if dims != self.model_.config.modality_dims and \
                    self.fusion != "early":
                raise DimensionError(
                    f"X dims {dims} do not match fitted dims "
                    f"{self.model_.config.modality_dims}")
        return mats

    def _to_samples(self, mats: list[np.ndarray], y=None) -> list[Sample]:
        n, t = mats[0].shape[0], self.s_enc + self.s_ant
        names = tuple(f"m{i}" for i in range(len(mats)))
        dummy_start = self.alpha * (t + 1)
        samples = []
        for i in range(n):
            label = 0 if y is None else int(y[i])
            ann = ActionAnnotation(video_id=f"sample{i:06d}", start_s=dummy_start,
                                   end_s=dummy_start + 1.0, verb_class=0,
                                   noun_class=0, action_class=label)
            samples.append(Sample(annotation=ann,
                                  features=[mats[m][i] for m in range(len(mats))],
                                  modalities=names))
        return samples

    # -- sklearn API ------------------------------------------------------

    def fit(self, X, y) -> "RUAnticipator":
        mats = self._validate_X(X, fitted=False)
        y = np.asarray(y)
        if y.ndim != 1 or y.shape[0] != mats[0].shape[0]:
            raise DimensionError(
                f"y shape {y.shape} does not match {mats[0].shape[0]} samples")
        if not (0.0 < self.validation_fraction < 1.0):
            raise ParameterError(
                f"validation_fraction must be in (0, 1), got {self.validation_fraction}")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ParameterError("need at least two classes to fit")

        rs = check_random_state(self.random_state)
        seed = int(rs.randint(0, 2**31 - 1))
        cfg = ModelConfig(
            modality_dims=tuple(a.shape[2] for a in mats),
            n_actions=len(self.classes_), alpha=self.alpha, s_enc=self.s_enc,
            s_ant=self.s_ant, hidden=self.hidden, dropout_p=self.dropout)
        samples = self._to_samples(mats, encoded)
        order = np.random.default_rng(seed).permutation(len(samples))
        n_val = max(1, int(round(len(samples) * self.validation_fraction)))
        if n_val >= len(samples):
            raise ParameterError("validation_fraction leaves no training samples")
        val_idx = set(order[:n_val].tolist())
        vocab = ActionVocabulary(
            action_to_verb=np.zeros(len(self.classes_), dtype=np.int64),
            action_to_noun=np.arange(len(self.classes_)),
            many_shot_verbs=[0],
            many_shot_nouns=list(range(len(self.classes_))),
            many_shot_actions=list(range(len(self.classes_))))
        data = TrainData(train=[s for i, s in enumerate(samples) if i not in val_idx],
                         val=[s for i, s in enumerate(samples) if i in val_idx],
                         vocab=vocab)
        tcfg = TrainConfig(lr=self.lr, momentum=self.momentum,
                           batch_size=self.batch_size, scp_epochs=self.scp_epochs,
                           scp_epochs_obj=self.scp_epochs,
                           branch_epochs=self.branch_epochs,
                           joint_epochs=self.joint_epochs,
                           early_stop_metric="mean_top1_over_rates", seed=seed)
        result = run_pipeline(data, cfg, tcfg, fusion=self.fusion,
                              use_scp=self.use_scp,
                              eval_k=min(5, len(self.classes_)))
        self.model_ = result.model
        self.reports_ = result.reports
        self.n_features_in_ = int(sum(a.shape[2] for a in mats))
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "this RUAnticipator is not fitted yet; call fit first")

    def predict_scores(self, X, tau_a: float | None = None) -> np.ndarray:
        """Fused class scores per sample, at the last step by default."""
        self._check_fitted()
        mats = self._validate_X(X, fitted=True)
        samples = self._to_samples(mats)
        table = score_table_from_model(self.model_, samples, fusion=self.fusion)
        step = table.n_steps - 1 if tau_a is None else table.step_for_tau(tau_a)
        return table.scores[:, step, :]

    def predict(self, X, tau_a: float | None = None) -> np.ndarray:
        scores = self.predict_scores(X, tau_a=tau_a)
        return self.classes_[np.argmax(scores, axis=1)]

    def score(self, X, y, tau_a: float | None = None) -> float:
        """Mean accuracy (fraction in [0, 1]) at the chosen horizon."""
        y = np.asarray(y)
        pred = self.predict(X, tau_a=tau_a)
        return float(np.mean(pred == y))
