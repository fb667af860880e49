"""Command line entry points.

Subcommands::

    anticipation gen-data   --out DIR [--config FILE] [--set sect.key=val ...]
    anticipation train      --config FILE [--set ...]
    anticipation eval       --checkpoint FILE --data DIR [--split val] ...
    anticipation eval       --suite ablation --config FILE
    anticipation anticipate --checkpoint FILE --data DIR --index I [--tau-a X]
    anticipation gradcheck  [--hidden H] [--dims D0,D1] [--actions C]

Settings come from an INI file plus ``--set section.key=value`` overrides.
Exit codes: 0 success, 2 usage or configuration problems, 1 runtime
failures.  Errors print one ``error: <Kind>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys

import numpy as np

from . import autodiff as ad
from .errors import (AnticipationError, ConfigError, ContractError, DataError,
                     EvaluationError, ParameterError, ParseError, RangeError)
from .evaluation import evaluate, format_report, save_report, top_k_accuracy
from .features import (Dataset, build_samples, load_checkpoint, load_dataset,
                       save_checkpoint)
from .model import ModelConfig, RUModel
from .synthetic import SynthConfig, generate, write_dataset
from .training import (TrainConfig, TrainData, run_pipeline,
                       score_table_from_model)

_USAGE_ERRORS = (ConfigError, ParameterError, ParseError, RangeError)


# ---------------------------------------------------------------------------
# settings


def _load_settings(path: str | None, overrides: list[str]) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser()
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path!r} does not exist")
        try:
            cp.read(path)
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from None
    settings: dict[str, dict[str, str]] = {s: dict(cp[s]) for s in cp.sections()}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set needs section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        section, name = key.split(".", 1)
        settings.setdefault(section.strip(), {})[name.strip()] = value.strip()
    return settings


class _Section:
    """Typed access to one settings section with defaults."""

    def __init__(self, settings: dict, name: str) -> None:
        self.name = name
        self.raw = settings.get(name, {})

    def _get(self, key, default, conv):
        if key not in self.raw:
            if default is _REQUIRED:
                raise ConfigError(f"missing required setting {self.name}.{key}")
            return default
        try:
            return conv(self.raw[key])
        except ValueError:
            raise ConfigError(
                f"setting {self.name}.{key}={self.raw[key]!r} is not a valid "
                f"{conv.__name__}") from None

    def str(self, key, default=None):
        return self._get(key, default, str)

    def int(self, key, default=None):
        return self._get(key, default, int)

    def float(self, key, default=None):
        return self._get(key, default, float)

    def bool(self, key, default=None):
        def boolean(v: str) -> bool:
            low = v.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(v)
        return self._get(key, default, boolean)


class _Required:
    pass


_REQUIRED = _Required()


def _synth_config(settings: dict) -> SynthConfig:
    s = _Section(settings, "synthetic")
    defaults = SynthConfig()
    return SynthConfig(
        n_videos=s.int("n_videos", defaults.n_videos),
        actions_per_video=s.int("actions_per_video", defaults.actions_per_video),
        val_videos=s.int("val_videos", defaults.val_videos),
        n_actions=s.int("n_actions", defaults.n_actions),
        n_verbs=s.int("n_verbs", defaults.n_verbs),
        n_nouns=s.int("n_nouns", defaults.n_nouns),
        appearance_dim=s.int("appearance_dim", defaults.appearance_dim),
        n_object_classes=s.int("n_object_classes", defaults.n_object_classes),
        informative_schedule=s.str("informative_schedule", defaults.informative_schedule),
        noise_sigma=s.float("noise_sigma", defaults.noise_sigma),
        decoy_strength=s.float("decoy_strength", defaults.decoy_strength),
        signal_scale=s.float("signal_scale", defaults.signal_scale),
        duration_s=s.float("duration_s", defaults.duration_s),
        alpha=s.float("alpha", defaults.alpha),
        s_enc=s.int("s_enc", defaults.s_enc),
        s_ant=s.int("s_ant", defaults.s_ant),
        seed=s.int("seed", defaults.seed),
    )


def _train_config(settings: dict) -> TrainConfig:
    s = _Section(settings, "training")
    d = TrainConfig()
    return TrainConfig(
        lr=s.float("lr", d.lr), momentum=s.float("momentum", d.momentum),
        batch_size=s.int("batch_size", d.batch_size),
        scp_epochs=s.int("scp_epochs", d.scp_epochs),
        scp_epochs_obj=s.int("scp_epochs_obj", d.scp_epochs_obj),
        branch_epochs=s.int("branch_epochs", d.branch_epochs),
        joint_epochs=s.int("joint_epochs", d.joint_epochs),
        early_stop_metric=s.str("early_stop_metric", d.early_stop_metric),
        at_tau=s.float("at_tau", d.at_tau), seed=s.int("seed", d.seed),
    )


def _model_config(settings: dict, ds: Dataset, protocol: str) -> ModelConfig:
    man = ds.manifest
    s = _Section(settings, "model")
    s_enc = s.int("s_enc", 0 if protocol == "early_recognition" else man["s_enc"])
    if protocol == "early_recognition" and s_enc != 0:
        raise ConfigError("early recognition runs with s_enc = 0")
    return ModelConfig(
        modality_dims=ds.modality_dims,
        n_actions=man["n_actions"], n_verbs=man["n_verbs"], n_nouns=man["n_nouns"],
        alpha=s.float("alpha", man["alpha"]),
        s_enc=s_enc,
        s_ant=s.int("s_ant", man["s_ant"]),
        hidden=s.int("hidden", 32),
        dropout_p=s.float("dropout_p", 0.1),
        modality_names=ds.modality_names,
    )


def _build_data(ds: Dataset, mcfg: ModelConfig, protocol: str) -> TrainData:
    train = build_samples(ds.timelines, ds.train_annotations, mcfg, protocol)
    val = build_samples(ds.timelines, ds.val_annotations, mcfg, protocol)
    return TrainData(train, val, ds.vocab)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    settings = _load_settings(args.config, args.set)
    cfg = _synth_config(settings)
    ds = generate(cfg)
    write_dataset(ds, args.out)
    n_rows = sum(len(t["app"].timestamps) for t in ds.timelines.values())
    print(f"wrote {args.out}: {cfg.n_videos} videos, "
          f"{len(ds.train_annotations)}+{len(ds.val_annotations)} instances, "
          f"{n_rows} feature rows, {len(ds.detections)} detections")
    return 0


def cmd_train(args) -> int:
    settings = _load_settings(args.config, args.set)
    paths = _Section(settings, "paths")
    data_dir = paths.str("data", _REQUIRED)
    out_dir = paths.str("out", _REQUIRED)
    run = _Section(settings, "run")
    fusion = run.str("fusion", "matt")
    use_scp = run.bool("scp", True)
    arch = run.str("arch", "ru")
    protocol = run.str("task", "anticipation")
    if protocol not in ("anticipation", "early_recognition"):
        raise ConfigError(f"run.task must be anticipation or early_recognition, "
                          f"got {protocol!r}")
    eval_k = run.int("eval_k", 5)

    ds = load_dataset(data_dir)
    mcfg = _model_config(settings, ds, protocol)
    tcfg = _train_config(settings)
    if protocol == "early_recognition" and tcfg.early_stop_metric != "mean_top1_over_rates":
        raise ConfigError("early recognition needs "
                          "training.early_stop_metric = mean_top1_over_rates")
    data = _build_data(ds, mcfg, protocol)
    result = run_pipeline(data, mcfg, tcfg, fusion=fusion, use_scp=use_scp,
                          arch=arch, eval_k=eval_k)

    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, "checkpoint.ruck")
    save_checkpoint(result.model, ckpt)
    with open(os.path.join(out_dir, "train_report.json"), "w") as f:
        json.dump({name: r.to_json_dict() for name, r in result.reports.items()},
                  f, indent=1, sort_keys=True)
        f.write("\n")
    save_report(result.eval_report, os.path.join(out_dir, "eval_report.json"))
    text = format_report(result.eval_report)
    with open(os.path.join(out_dir, "eval_report.txt"), "w") as f:
        f.write(text + "\n")
    result.table.save_csv(os.path.join(out_dir, "scores_val.csv"))

    for name, rep in result.reports.items():
        print(f"stage {name}: best val metric {rep.best_metric:.2f} "
              f"at epoch {rep.selected_epoch} ({rep.wall_clock_s:.1f}s)")
    print(text)
    print(f"wrote {ckpt}")
    return 0


_ABLATION_VARIANTS = (
    ("matt", "ru", True), ("matt", "ru", False), ("late", "ru", True),
    ("early", "ru", True), ("late", "bl", False),
)


def cmd_eval(args) -> int:
    if args.suite == "ablation":
        return _eval_ablation(args)
    if args.checkpoint is None or args.data is None:
        raise ConfigError("eval needs --checkpoint and --data (or --suite ablation)")
    model = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    protocol = ("early_recognition" if model.config.s_enc == 0 else "anticipation")
    ann = ds.val_annotations if args.split == "val" else ds.train_annotations
    samples = build_samples(ds.timelines, ann, model.config, protocol)
    table = score_table_from_model(model, samples)
    if table.kind == "anticipation":
        report = evaluate(table, ds.vocab, k=args.k, at_tau=args.at_tau)
    else:
        report = evaluate(table, ds.vocab)
    report["fusion"] = model.default_fusion
    report["split"] = args.split
    print(format_report(report))
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        save_report(report, os.path.join(args.out, f"eval_{args.split}.json"))
        table.save_csv(os.path.join(args.out, f"scores_{args.split}.csv"))
        print(f"wrote {args.out}")
    return 0


def _eval_ablation(args) -> int:
    """Train and compare fusion/architecture variants on one dataset."""
    if args.config is None:
        raise ConfigError("--suite ablation needs --config for training settings")
    settings = _load_settings(args.config, args.set)
    paths = _Section(settings, "paths")
    ds = load_dataset(paths.str("data", _REQUIRED))
    mcfg = _model_config(settings, ds, "anticipation")
    tcfg = _train_config(settings)
    data = _build_data(ds, mcfg, "anticipation")
    singles = [f"single:{m}" for m in range(mcfg.n_modalities)]
    rows = []
    for fusion, arch, use_scp in _ABLATION_VARIANTS + tuple((s, "ru", True)
                                                            for s in singles):
        res = run_pipeline(data, mcfg, tcfg, fusion=fusion, use_scp=use_scp,
                           arch=arch, eval_k=args.k)
        tbl = res.table
        mean_top1 = float(np.mean([top_k_accuracy(tbl, 1, s)
                                   for s in range(tbl.n_steps)]))
        at = top_k_accuracy(tbl, args.k, tbl.step_for_tau(args.at_tau))
        rows.append((fusion, arch, use_scp, mean_top1, at))
        print(f"{fusion:>10} arch={arch} scp={'on' if use_scp else 'off':>3}: "
              f"mean top-1 {mean_top1:6.2f}   top-{args.k}@{args.at_tau:.2f}s {at:6.2f}")
    best = max(rows, key=lambda r: r[3])
    print(f"best by mean top-1: {best[0]} (arch={best[1]}, "
          f"scp={'on' if best[2] else 'off'})")
    return 0


def cmd_anticipate(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    ann = ds.val_annotations if args.split == "val" else ds.train_annotations
    if not (0 <= args.index < len(ann)):
        raise ParameterError(
            f"--index {args.index} outside [0, {len(ann)}) for split {args.split!r}")
    samples = build_samples(ds.timelines, [ann[args.index]], model.config,
                            "anticipation")
    sample = samples[0]
    print(f"sample {sample.sample_id}: true action {sample.annotation.action_class} "
          f"(verb {sample.annotation.verb_class}, noun {sample.annotation.noun_class})")
    if args.tau_a is not None:  # fixed-time mode: exactly one prediction block
        taus = model.config.anticipation_taus()
        if not any(abs(v - args.tau_a) < 1e-9 for v in taus):
            raise ParameterError(f"--tau-a {args.tau_a} not on the grid "
                                 f"{[round(v, 4) for v in taus]}")
    outputs = model.forward([sample], training=False)
    names = model.config.modality_names
    for o in outputs:
        if args.tau_a is not None and abs(o.tau_a - args.tau_a) >= 1e-9:
            continue
        scores = o.fused_scores.data[0]
        order = np.argsort(-scores, kind="stable")[:args.top]
        cells = "  ".join(f"{c}:{scores[c]:.3f}" for c in order)
        w = o.fusion_weights.data[0]
        if len(w) == len(names):
            weights = "  ".join(f"{n}={100.0 * v:.1f}%" for n, v in zip(names, w))
        else:
            weights = "single branch"
        print(f"  tau_a={o.tau_a:.2f}s  top-{args.top}: {cells}  [{weights}]")
    return 0


def cmd_gradcheck(args) -> int:
    dims = tuple(int(d) for d in args.dims.split(","))
    rng = np.random.default_rng(args.seed)
    failures = 0
    print(f"{'op':<22}{'probes':>8}{'max rel err':>14}  status")

    def row(name, res):
        nonlocal failures
        ok = not res["failures"]
        failures += 0 if ok else 1
        print(f"{name:<22}{res['n_probes']:>8}{res['max_rel_err']:>14.3e}  "
              f"{'ok' if ok else 'FAIL'}")

    for name, res in _op_checks(rng):
        row(name, res)
    res = _model_check(dims, args.hidden, args.actions, rng)
    row("whole model", res)
    if failures:
        print(f"{failures} check(s) failed")
        return 1
    print("all gradient checks passed")
    return 0


def _op_checks(rng):
    """Finite-difference checks for each differentiable op."""
    x = ad.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    w = ad.Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    b = ad.Tensor(rng.normal(size=5), requires_grad=True)
    s = ad.Tensor(rng.normal(size=(4, 1)), requires_grad=True)
    v = ad.Tensor(rng.normal(size=7), requires_grad=True)
    t2 = np.array([1, 0, 4, 2])
    mask_rng_seed = int(rng.integers(2**31))
    checks = [
        ("matmul", lambda: ad.tsum(ad.matmul(x, w)), [x, w]),
        ("transpose", lambda: ad.tsum(ad.mul(ad.transpose(x), ad.transpose(x))), [x]),
        ("add", lambda: ad.tsum(ad.add(x, x)), [x]),
        ("mul", lambda: ad.tsum(ad.mul(x, x)), [x]),
        ("scale", lambda: ad.tsum(ad.scale(x, -1.7)), [x]),
        ("bias_add", lambda: ad.tsum(ad.bias_add(ad.matmul(x, w), b)), [x, w, b]),
        ("scale_rows", lambda: ad.tsum(ad.scale_rows(x, s)), [x, s]),
        ("sigmoid", lambda: ad.tsum(ad.sigmoid(x)), [x]),
        ("tanh", lambda: ad.tsum(ad.tanh(x)), [x]),
        ("relu", lambda: ad.tsum(ad.relu(x)), [x]),
        ("softmax", lambda: ad.tsum(ad.mul(ad.softmax(x), ad.softmax(x))), [x]),
        ("concat", lambda: ad.tsum(ad.mul(ad.concat([x, x], axis=1),
                                          ad.concat([x, x], axis=1))), [x]),
        ("slice_cols", lambda: ad.tsum(ad.slice_cols(x, 1, 3)), [x]),
        ("dropout", lambda: ad.tsum(ad.dropout(
            x, 0.4, True, np.random.default_rng(mask_rng_seed))), [x]),
        ("cross_entropy", lambda: ad.cross_entropy(v, 3), [v]),
        ("cross_entropy_rows", lambda: ad.cross_entropy_rows(
            ad.bias_add(ad.matmul(x, w), b), t2), [x, w, b]),
        ("tsum", lambda: ad.tsum(x), [x]),
    ]
    for name, fn, tensors in checks:
        yield name, ad.gradient_check(fn, tensors)


def _model_check(dims, hidden, actions, rng):
    from .training import loss_anticipation

    cfg = ModelConfig(modality_dims=dims, n_actions=actions, s_enc=2, s_ant=3,
                      hidden=hidden, dropout_p=0.0)
    model = RUModel(cfg, rng=rng)

    class _S:
        features = [rng.normal(size=(cfg.n_steps, d)) for d in dims]
    sample = _S()
    targets = np.array([rng.integers(actions)])
    params = model.parameters("matt")

    def fn():
        outs = model.forward([sample], fusion="matt", training=False)
        return loss_anticipation(outs, targets)

    return ad.gradient_check(fn, [p.value for p in params])


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="anticipation",
        description="train and evaluate multi-modal sequence anticipation models")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--config", default=None, help="INI settings file")
    g.add_argument("--set", action="append", default=[], metavar="SECT.KEY=VAL")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="run the staged training pipeline")
    t.add_argument("--config", required=True, help="INI settings file")
    t.add_argument("--set", action="append", default=[], metavar="SECT.KEY=VAL")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint, or run the ablation suite")
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--data", default=None, help="dataset directory")
    e.add_argument("--split", choices=("train", "val"), default="val")
    e.add_argument("--k", type=int, default=5)
    e.add_argument("--at-tau", type=float, default=1.0, dest="at_tau")
    e.add_argument("--suite", choices=("ablation",), default=None)
    e.add_argument("--config", default=None, help="INI settings (ablation suite)")
    e.add_argument("--set", action="append", default=[], metavar="SECT.KEY=VAL")
    e.add_argument("--out", default=None, help="directory for report artifacts")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("anticipate", help="predict upcoming action for one sample")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--split", choices=("train", "val"), default="val")
    a.add_argument("--index", type=int, required=True)
    a.add_argument("--tau-a", type=float, default=None, dest="tau_a")
    a.add_argument("--top", type=int, default=4)
    a.set_defaults(fn=cmd_anticipate)

    c = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    c.add_argument("--hidden", type=int, default=4)
    c.add_argument("--dims", default="3,3")
    c.add_argument("--actions", type=int, default=5)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _USAGE_ERRORS as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except AnticipationError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
