"""Command line interface.

Verbs: ``generate`` (synthetic cohort), ``train``, ``eval``, ``predict``,
``export-latent``, ``ablate``. Configuration precedence is CLI flag over
config-file line over built-in default; every run echoes its fully resolved
configuration next to its outputs, and all artifacts are written atomically.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (DataError, Normalizer, fit_normalizer, impute, load_cohort,
                   prepare_surgery, read_surgery_csv, split_cohort)
from .fileio import atomic_write_text
from .metrics import MetricError, PredictionSet, pr_auc, report
from .model import (VARIANTS, ConfigError, DesatModel, ModelConfig, alarms_from_paths,
                    forecast_paths, infer_stream, latent_stream)
from .synth import CohortSpec, generate_cohort, measure_cohort, write_cohort
from .train import NumericError, TrainConfig, history_csv, train_model


class UsageError(ValueError):
    """Bad flags or option values."""


LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)

_MODEL_FIELDS = {f.name: f for f in dataclasses.fields(ModelConfig)}
_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)
                 if f.name not in ("verbose", "diagnostics_dir")}


def _convert(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot parse value {raw!r}") from None


def _read_config_file(path: Path) -> dict:
    """key=value lines; blank lines and # comments ignored."""
    out = {}
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    for i, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{i}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        out[key.strip()] = raw.strip()
    return out


def _resolve_configs(args) -> tuple[ModelConfig, TrainConfig, dict]:
    """Merge defaults, config file, and CLI flags into typed configs."""
    model_kwargs: dict = {}
    train_kwargs: dict = {}

    def assign(key, value, raw=False):
        if key in _MODEL_FIELDS:
            default = _MODEL_FIELDS[key].default
            model_kwargs[key] = _convert(key, value, default) if raw else value
        elif key in _TRAIN_FIELDS:
            default = _TRAIN_FIELDS[key].default
            train_kwargs[key] = _convert(key, value, default) if raw else value
        else:
            raise UsageError(f"unknown config key {key!r}")

    if getattr(args, "config", None):
        for key, raw in _read_config_file(Path(args.config)).items():
            assign(key, raw, raw=True)
    for key in list(_MODEL_FIELDS) + list(_TRAIN_FIELDS):
        value = getattr(args, key, None)
        if value is not None:
            assign(key, value)
    try:
        mcfg = ModelConfig(**model_kwargs)
        tcfg = TrainConfig(**train_kwargs)
    except (ConfigError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    tcfg.verbose = bool(getattr(args, "verbose", False))
    resolved = dict(mcfg.to_dict())
    resolved.update({k: getattr(tcfg, k) for k in _TRAIN_FIELDS})
    return mcfg, tcfg, resolved


def _format_config(mapping: dict) -> str:
    lines = []
    for key in sorted(mapping):
        v = mapping[key]
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{key}={v}")
    return "\n".join(lines) + "\n"


def _echo_config(out_dir: Path, mapping: dict, name: str = "config_resolved.txt") -> None:
    atomic_write_text(Path(out_dir) / name, _format_config(mapping))


def _manifest_path(cohort: str) -> Path:
    p = Path(cohort)
    if p.is_dir():
        p = p / "manifest.csv"
    if not p.exists():
        raise DataError(f"cohort manifest not found: {p}")
    return p


# -- shared pipelines ----------------------------------------------------------


def _prepare(records, ids, normalizer: Normalizer, cfg: ModelConfig):
    by_id = {r.surgery_id: r for r in records}
    return [prepare_surgery(by_id[i], normalizer, cfg.window, cfg.horizon,
                            cfg.lead, cfg.min_run, cfg.spo2_threshold)
            for i in ids]


def _train_pipeline(records, mcfg: ModelConfig, tcfg: TrainConfig):
    split = split_cohort([r.surgery_id for r in records], mcfg.seed)
    by_id = {r.surgery_id: r for r in records}
    if mcfg.n_channels != records[0].n_channels:
        raise DataError(f"cohort has {records[0].n_channels} channels, "
                        f"config says {mcfg.n_channels}")
    normalizer = fit_normalizer([impute(by_id[i]) for i in split.train])
    train_set = _prepare(records, split.train, normalizer, mcfg)
    val_set = _prepare(records, split.validation, normalizer, mcfg)
    model = DesatModel(mcfg)
    history = train_model(model, train_set, val_set, tcfg)
    return model, normalizer, history, split


def _score_surgeries(model: DesatModel, normalizer: Normalizer, records):
    """PredictionSet over whole surgeries plus forecast RMSE when applicable.

    Predictor variants score with the streaming classifier; the predictor-free
    variant scores 0/1 from decoded forecast alarms.
    """
    cfg = model.cfg
    scores, labels, masks, sids, minutes = [], [], [], [], []
    sq_err, n_err = 0.0, 0
    for rec in records:
        ps = prepare_surgery(rec, normalizer, cfg.window, cfg.horizon,
                             cfg.lead, cfg.min_run, cfg.spo2_threshold)
        if cfg.variant == "r_plus_f":
            paths = forecast_paths(model, ps.x)
            s = alarms_from_paths(paths, cfg.lead, cfg.min_run).astype(np.float64)
            keep = ~ps.truncated
            if keep.any():
                future = slice(cfg.window - cfg.lead, cfg.window)
                diff = paths[keep][:, future] - ps.u[keep][:, future]
                sq_err += float((diff * diff).sum())
                n_err += diff.size
        else:
            s = infer_stream(model, ps.x)
        scores.append(s)
        labels.append(ps.y)
        masks.append(ps.m)
        sids.append(np.repeat(rec.surgery_id, ps.duration))
        minutes.append(np.arange(ps.duration))
    pset = PredictionSet(np.concatenate(scores), np.concatenate(labels),
                         np.concatenate(masks), np.concatenate(sids),
                         np.concatenate(minutes))
    forecast_rmse = float(np.sqrt(sq_err / n_err)) if n_err else None
    return pset, forecast_rmse


def _split_ids(split, which: str) -> list:
    table = {"train": split.train, "val": split.validation,
             "validation": split.validation, "test": split.test,
             "all": split.train + split.validation + split.test}
    if which not in table:
        raise UsageError(f"--split must be one of {sorted(table)}, got {which!r}")
    return table[which]


# -- commands -------------------------------------------------------------------


def cmd_generate(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be a positive surgery count")
    try:
        spec = CohortSpec(n_surgeries=args.n, mean_duration=args.mean_duration,
                          general_incidence=args.general_incidence,
                          persistent_incidence=args.persistent_incidence,
                          missing_scale=args.missing_scale, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    records = generate_cohort(spec)
    out = Path(args.out)
    manifest = write_cohort(records, out)
    rep = measure_cohort(records)
    rep["targets"] = {"general_incidence": spec.general_incidence,
                      "persistent_incidence": spec.persistent_incidence,
                      "mean_duration": spec.mean_duration}
    atomic_write_text(out / "prevalence_report.json",
                      json.dumps(rep, indent=2, sort_keys=True) + "\n")
    _echo_config(out, dataclasses.asdict(spec), "generate_config.txt")
    print(f"wrote {len(records)} surgeries to {manifest}")
    print(f"general incidence {rep['general_incidence']:.4f} "
          f"(target {spec.general_incidence}), persistent "
          f"{rep['persistent_incidence']:.4f} (target {spec.persistent_incidence})")
    return 0


def _save_train_outputs(out: Path, model, normalizer, history, resolved) -> None:
    save_checkpoint(out / "checkpoint.ckpt", model, normalizer)
    atomic_write_text(out / "history.csv", history_csv(history))
    _echo_config(out, resolved)


def cmd_train(args) -> int:
    mcfg, tcfg, resolved = _resolve_configs(args)
    out = Path(args.out)
    tcfg.diagnostics_dir = str(out)
    records = load_cohort(_manifest_path(args.cohort))
    resolved["cohort"] = str(args.cohort)

    if args.lambda_grid:
        if mcfg.variant == "r_plus_f":
            raise UsageError("--lambda-grid selects by validation PR-AUC and "
                             "needs a predictor; variant r_plus_f has none")
        rows, best = [], None
        for lam in LAMBDA_GRID:
            cfg_l = dataclasses.replace(mcfg, aux_weight=lam)
            model, normalizer, history, split = _train_pipeline(records, cfg_l, tcfg)
            by_id = {r.surgery_id: r for r in records}
            val_ps, _ = _score_surgeries(model, normalizer,
                                         [by_id[i] for i in split.validation])
            score = pr_auc(val_ps)
            rows.append((lam, score, len(history)))
            if best is None or score > best[1]:
                best = (lam, score, model, normalizer, history)
            print(f"lambda {lam:g}: validation PR-AUC {score:.4f}")
        lam, score, model, normalizer, history = best
        resolved["aux_weight"] = lam
        lines = ["aux_weight,val_pr_auc,epochs"]
        lines += [f"{w:g},{s:.6f},{e}" for w, s, e in rows]
        atomic_write_text(out / "lambda_grid.csv", "\n".join(lines) + "\n")
        print(f"selected lambda {lam:g} (validation PR-AUC {score:.4f})")
    else:
        model, normalizer, history, _ = _train_pipeline(records, mcfg, tcfg)

    _save_train_outputs(out, model, normalizer, history, resolved)
    best_epoch = getattr(model, "_best_epoch", len(history))
    print(f"trained {mcfg.variant} model for {len(history)} epochs "
          f"(best epoch {best_epoch}); checkpoint at {out / 'checkpoint.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    model, normalizer = load_checkpoint(args.checkpoint)
    records = load_cohort(_manifest_path(args.cohort))
    split = split_cohort([r.surgery_id for r in records], model.cfg.seed)
    ids = _split_ids(split, args.split)
    by_id = {r.surgery_id: r for r in records}
    chosen = [by_id[i] for i in ids]
    pset, forecast_rmse = _score_surgeries(model, normalizer, chosen)
    rep = report(pset, model.cfg.outcome, args.sens_target, args.alarms_labeled_only)
    rep["variant"] = model.cfg.variant
    rep["split"] = args.split
    if forecast_rmse is not None:
        rep["forecast_rmse"] = forecast_rmse

    out = Path(args.out)
    atomic_write_text(out / "metrics_report.json",
                      json.dumps(rep, indent=2, sort_keys=True) + "\n")
    threshold = rep["threshold_at_0.8_sens"]
    lines = ["surgery_id,n_minutes,n_alarms,alarms_per_10h"]
    for sid in ids:
        sel = pset.surgery_ids == sid
        n_min = int(sel.sum())
        n_alarm = int((pset.scores[sel] >= threshold).sum())
        lines.append(f"{sid},{n_min},{n_alarm},{600.0 * n_alarm / n_min:.4f}")
    atomic_write_text(out / "per_surgery_alarms.csv", "\n".join(lines) + "\n")
    _echo_config(out, {**model.cfg.to_dict(), "checkpoint": str(args.checkpoint),
                       "cohort": str(args.cohort), "split": args.split},
                 "eval_config.txt")
    for key in ("roc_auc", "pr_auc", "prevalence", "alarms_per_10h"):
        print(f"{key}: {rep[key]:.6g}")
    return 0


def cmd_predict(args) -> int:
    model, normalizer = load_checkpoint(args.checkpoint)
    record = read_surgery_csv(Path(args.surgery))
    cfg = model.cfg
    prepared = prepare_surgery(record, normalizer, cfg.window, cfg.horizon,
                               cfg.lead, cfg.min_run, cfg.spo2_threshold)
    if cfg.variant == "r_plus_f":
        paths = forecast_paths(model, prepared.x)
        scores = alarms_from_paths(paths, cfg.lead, cfg.min_run).astype(np.float64)
    else:
        scores = infer_stream(model, prepared.x)
    lines = ["minute,score"]
    lines += [f"{t},{s:.8g}" for t, s in enumerate(scores)]
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"wrote {scores.shape[0]} scores to {args.out}")
    return 0


def cmd_export_latent(args) -> int:
    model, normalizer = load_checkpoint(args.checkpoint)
    records = load_cohort(_manifest_path(args.cohort))
    split = split_cohort([r.surgery_id for r in records], model.cfg.seed)
    ids = _split_ids(split, args.split)
    by_id = {r.surgery_id: r for r in records}
    cfg = model.cfg
    F = cfg.filters
    header = (["surgery_id", "minute"] + [f"z{i}" for i in range(F)]
              + [f"p{i}" for i in range(F)] + ["y", "m"])
    lines = [",".join(header)]
    for sid in ids:
        prepared = prepare_surgery(by_id[sid], normalizer, cfg.window, cfg.horizon,
                                   cfg.lead, cfg.min_run, cfg.spo2_threshold)
        z, p = latent_stream(model, prepared.x)
        for t in range(prepared.duration):
            cells = [sid, str(t)]
            cells += [f"{v:.8g}" for v in z[t]]
            cells += [f"{v:.8g}" for v in p[t]]
            cells += [str(int(prepared.y[t])), str(int(prepared.m[t]))]
            lines.append(",".join(cells))
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"wrote latents for {len(ids)} surgeries to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    mcfg, tcfg, resolved = _resolve_configs(args)
    out = Path(args.out)
    tcfg.diagnostics_dir = str(out)
    records = load_cohort(_manifest_path(args.cohort))
    by_id = {r.surgery_id: r for r in records}

    columns = ["variant", "roc_auc", "pr_auc", "sensitivity", "precision",
               "alarms_per_10h", "forecast_rmse", "epochs"]
    rows = []
    for variant in VARIANTS:
        cfg_v = dataclasses.replace(mcfg, variant=variant)
        model, normalizer, history, split = _train_pipeline(records, cfg_v, tcfg)
        test_ps, forecast_rmse = _score_surgeries(
            model, normalizer, [by_id[i] for i in split.test])
        rep = report(test_ps, cfg_v.outcome, args.sens_target)
        save_checkpoint(out / f"checkpoint_{variant}.ckpt", model, normalizer)
        rows.append({
            "variant": variant,
            "roc_auc": f"{rep['roc_auc']:.4f}",
            "pr_auc": f"{rep['pr_auc']:.4f}",
            "sensitivity": f"{rep['sensitivity_at_threshold']:.4f}",
            "precision": f"{rep['precision_at_threshold']:.4f}",
            "alarms_per_10h": f"{rep['alarms_per_10h']:.2f}",
            "forecast_rmse": "" if forecast_rmse is None else f"{forecast_rmse:.4f}",
            "epochs": str(len(history)),
        })
        print(f"{variant}: ROC-AUC {rep['roc_auc']:.4f}  PR-AUC {rep['pr_auc']:.4f}")

    lines = [",".join(columns)]
    lines += [",".join(r[c] for c in columns) for r in rows]
    atomic_write_text(out / "ablation_report.csv", "\n".join(lines) + "\n")
    _echo_config(out, resolved)

    widths = {c: max(len(c), *(len(r[c]) for r in rows)) for c in columns}
    print("  ".join(c.ljust(widths[c]) for c in columns))
    for r in rows:
        print("  ".join(r[c].ljust(widths[c]) for c in columns))
    return 0


# -- parser ---------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--verbose", action="store_true", help="per-epoch progress lines")
    for name, f in _MODEL_FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if isinstance(f.default, tuple):
            p.add_argument(flag, type=lambda s: tuple(int(v) for v in s.replace(",", " ").split()))
        else:
            p.add_argument(flag, type=type(f.default))
    for name, f in _TRAIN_FIELDS.items():
        p.add_argument("--" + name.replace("_", "-"), type=type(f.default))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="desatnet",
        description="Minute-level desaturation risk prediction toolkit")
    parser.add_argument("--version", action="version", version=f"desatnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic cohort")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, required=True, help="number of surgeries")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mean-duration", type=float, default=89.0)
    g.add_argument("--general-incidence", type=float, default=0.24)
    g.add_argument("--persistent-incidence", type=float, default=0.019)
    g.add_argument("--missing-scale", type=float, default=1.0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a cohort")
    t.add_argument("--cohort", required=True, help="cohort dir or manifest.csv")
    t.add_argument("--out", required=True)
    t.add_argument("--lambda-grid", action="store_true",
                   help="sweep the aux loss weight over a fixed grid and keep "
                        "the best by validation PR-AUC")
    _add_config_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a cohort split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--cohort", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--sens-target", type=float, default=0.8)
    e.add_argument("--alarms-labeled-only", action="store_true")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="score one surgery CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--surgery", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    x = sub.add_parser("export-latent", help="dump per-minute latent vectors")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--cohort", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--split", default="test")
    x.set_defaults(func=cmd_export_latent)

    a = sub.add_parser("ablate", help="train and compare all variants")
    a.add_argument("--cohort", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--sens-target", type=float, default=0.8)
    _add_config_flags(a)
    a.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, MetricError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


def entrypoint() -> None:
    raise SystemExit(main())
