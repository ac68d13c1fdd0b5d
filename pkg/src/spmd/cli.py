"""Command-line entry point: train, eval, bench, and check.

Configs are JSON files validated exhaustively before any compute. Every run
writes ``run.json`` with the fully resolved config. CSV outputs hold full-
precision values (repr round-trip); human-readable text rounds to 4
decimals. Timing lands in text summaries and timings.json only, keeping
the CSVs byte-identical across reruns of the same config.

Exit codes: 0 success, 1 check failure, 2 config/validation error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from . import theory
from .data import (LabeledDataset, data_dir, find_mnist, load_dataset,
                   load_idx, reshape_multiclass, reshape_samples,
                   select_binary, select_multiclass, synth_blobs,
                   synth_multiclass)
from .margins import summarize_scores
from .multiclass import ovo_train, pairwise_accuracy
from .trainer import (TrainConfig, TrainingError, WeightModel, apply_bias,
                      decision_scores, load_model, save_model, train)

METHODS = ("svm", "lmdm", "stm", "spmd-r1", "spmd-cp", "spmd-tucker")

_METHOD_KIND = {
    "svm": "vector",
    "lmdm": "vector",
    "stm": "rank1",
    "spmd-r1": "rank1",
    "spmd-cp": "cp",
    "spmd-tucker": "tucker",
}
_ZERO_MU = {"svm", "stm"}
_FLATTEN = {"svm", "lmdm"}


class ConfigError(ValueError):
    """Invalid config or arguments; maps to exit code 2."""


class CheckFailure(RuntimeError):
    """A theory check failed; maps to exit code 1."""


# --- config schema -----------------------------------------------------------

_TOP_DEFAULTS = {
    "method": None,
    "methods": None,
    "ranks": [],
    "mu1": 1.0,
    "mu2": 1.0,
    "lambda": 1.0,
    "epsilon": 1e-2,
    "qp_tol": 1e-8,
    "max_outer": 50,
    "seed": 0,
    "bias_feature": False,
    "workers": 1,
    "out_dir": None,
    "dataset": None,
}

_DATASET_KEYS = {
    "synth": {"source", "shape", "n_per_class", "margin", "noise", "seed",
              "test_n_per_class", "n_classes", "reshape"},
    "idx": {"source", "images", "labels", "classes", "per_class", "seed",
            "test_images", "test_labels", "test_per_class", "reshape"},
    "dir": {"source", "path", "test_path", "reshape"},
}


def _need(cond, msg):
    if not cond:
        raise ConfigError(msg)


def load_config(path: str) -> dict:
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}")
    _need(isinstance(raw, dict), "config root must be a JSON object")
    return raw


def resolve_config(raw: dict, need_method=True, need_methods=False) -> dict:
    """Fill defaults and validate every field; raises ConfigError naming it."""
    unknown = set(raw) - set(_TOP_DEFAULTS)
    _need(not unknown, f"unknown config field(s): {sorted(unknown)}")
    cfg = dict(_TOP_DEFAULTS)
    cfg.update(raw)

    for key in ("mu1", "mu2", "lambda", "epsilon", "qp_tol"):
        _need(isinstance(cfg[key], (int, float)) and not isinstance(cfg[key], bool),
              f"field '{key}' must be a number")
        cfg[key] = float(cfg[key])
    _need(cfg["mu1"] >= 0 and cfg["mu2"] >= 0, "fields 'mu1'/'mu2' must be >= 0")
    _need(cfg["lambda"] > 0, "field 'lambda' must be > 0")
    _need(cfg["epsilon"] > 0, "field 'epsilon' must be > 0")
    _need(cfg["qp_tol"] > 0, "field 'qp_tol' must be > 0")
    for key in ("max_outer", "seed", "workers"):
        _need(isinstance(cfg[key], int) and not isinstance(cfg[key], bool),
              f"field '{key}' must be an integer")
    _need(cfg["max_outer"] >= 1, "field 'max_outer' must be >= 1")
    _need(cfg["workers"] >= 1, "field 'workers' must be >= 1")
    _need(isinstance(cfg["bias_feature"], bool), "field 'bias_feature' must be boolean")
    _need(isinstance(cfg["ranks"], list) and
          all(isinstance(r, int) and not isinstance(r, bool) and r >= 1
              for r in cfg["ranks"]),
          "field 'ranks' must be a list of integers >= 1")

    if need_method:
        _need(cfg["method"] in METHODS,
              f"field 'method' must be one of {list(METHODS)}, got {cfg['method']!r}")
    if need_methods:
        _need(isinstance(cfg["methods"], list) and len(cfg["methods"]) > 0,
              "field 'methods' must be a non-empty list")
        for m in cfg["methods"]:
            _need(m in METHODS,
                  f"field 'methods' entry {m!r} must be one of {list(METHODS)}")

    _need(isinstance(cfg["dataset"], dict), "field 'dataset' must be an object")
    ds = dict(cfg["dataset"])
    src = ds.get("source")
    _need(src in _DATASET_KEYS,
          f"field 'dataset.source' must be one of {sorted(_DATASET_KEYS)}, got {src!r}")
    unknown = set(ds) - _DATASET_KEYS[src]
    _need(not unknown, f"unknown dataset field(s) for source {src!r}: {sorted(unknown)}")

    if src == "synth":
        _need(isinstance(ds.get("shape"), list) and len(ds["shape"]) >= 1 and
              all(isinstance(d, int) and d >= 1 for d in ds["shape"]),
              "field 'dataset.shape' must be a list of positive integers")
        _need(isinstance(ds.get("n_per_class"), int) and ds["n_per_class"] >= 1,
              "field 'dataset.n_per_class' must be a positive integer")
        ds.setdefault("margin", 1.5)
        ds.setdefault("noise", 0.5)
        _need(float(ds["margin"]) > 0, "field 'dataset.margin' must be > 0")
        _need(float(ds["noise"]) >= 0, "field 'dataset.noise' must be >= 0")
        if ds.get("n_classes") is not None:
            _need(isinstance(ds["n_classes"], int) and ds["n_classes"] >= 2,
                  "field 'dataset.n_classes' must be an integer >= 2")
    elif src == "idx":
        for key in ("images", "labels"):
            _need(isinstance(ds.get(key), str),
                  f"field 'dataset.{key}' must be a path string")
        _need(isinstance(ds.get("classes"), list) and len(ds["classes"]) >= 2 and
              all(isinstance(c, int) for c in ds["classes"]),
              "field 'dataset.classes' must be a list of >= 2 integer labels")
        if ds.get("per_class") is not None:
            _need(isinstance(ds["per_class"], int) and ds["per_class"] >= 1,
                  "field 'dataset.per_class' must be a positive integer")
        if ds.get("test_per_class") is not None:
            _need(isinstance(ds["test_per_class"], int) and ds["test_per_class"] >= 1,
                  "field 'dataset.test_per_class' must be a positive integer")
    else:
        _need(isinstance(ds.get("path"), str), "field 'dataset.path' must be a path string")

    ds.setdefault("seed", 0)
    _need(isinstance(ds["seed"], int), "field 'dataset.seed' must be an integer")
    if ds.get("reshape") is not None:
        _need(isinstance(ds["reshape"], list) and len(ds["reshape"]) >= 1 and
              all(isinstance(d, int) and d >= 1 for d in ds["reshape"]),
              "field 'dataset.reshape' must be a list of positive integers")
    cfg["dataset"] = ds
    return cfg


def _validate_method_ranks(method: str, ranks: list, dims: tuple) -> list:
    kind = _METHOD_KIND[method]
    if kind in ("vector", "rank1"):
        _need(ranks in ([], [1]) or (kind == "rank1" and ranks == [1] * len(dims)),
              f"field 'ranks' must be empty for method {method!r}")
        return []
    if kind == "cp":
        _need(len(ranks) == 1, "field 'ranks' must be a single CP rank for spmd-cp")
        return ranks
    _need(len(ranks) == len(dims),
          f"field 'ranks' must list one rank per mode ({len(dims)} modes "
          f"after reshape) for spmd-tucker, got {len(ranks)}")
    return ranks


# --- dataset construction ----------------------------------------------------


def _resolve_path(p: str) -> str:
    if p == "auto" or os.path.isabs(p) or os.path.exists(p):
        return p
    return os.path.join(data_dir(), p)


def _load_idx_pair(ds: dict, images_key: str, labels_key: str):
    images, labels = ds.get(images_key), ds.get(labels_key)
    if images is None or labels is None:
        return None
    if images == "auto" or labels == "auto":
        found = find_mnist()
        _need(found is not None,
              f"dataset.{images_key} is 'auto' but the standard IDX files were "
              f"not found under {data_dir()!r} (set SPMD_DATA_DIR)")
        key = "train" if images_key == "images" else "test"
        return load_idx(found[f"{key}_images"], found[f"{key}_labels"])
    try:
        return load_idx(_resolve_path(images), _resolve_path(labels))
    except FileNotFoundError as e:
        raise ConfigError(f"dataset file missing: {e}")


def build_binary_dataset(ds: dict, seed: int):
    """(train, test-or-None) LabeledDatasets from a dataset section."""
    src = ds["source"]
    if src == "synth":
        _need(ds.get("n_classes") in (None, 2),
              "binary commands need a 2-class dataset (drop 'n_classes')")
        train_set = synth_blobs(ds["shape"], ds["n_per_class"], ds["margin"],
                                ds["noise"], ds["seed"])
        test_set = None
        if ds.get("test_n_per_class"):
            test_set = synth_blobs(ds["shape"], ds["test_n_per_class"],
                                   ds["margin"], ds["noise"], ds["seed"] + 1)
    elif src == "idx":
        _need(len(ds["classes"]) == 2,
              "field 'dataset.classes' must name exactly 2 classes for binary runs")
        a, b = ds["classes"]
        raw = _load_idx_pair(ds, "images", "labels")
        train_set = select_binary(raw, a, b, ds.get("per_class"), ds["seed"])
        raw_test = _load_idx_pair(ds, "test_images", "test_labels")
        test_set = None
        if raw_test is not None:
            test_set = select_binary(raw_test, a, b, ds.get("test_per_class"),
                                     ds["seed"] + 1)
    else:
        path = _resolve_path(ds["path"])
        if not os.path.isdir(path):
            raise ConfigError(f"dataset directory not found: {path}")
        train_set = load_dataset(path)
        test_set = None
        if ds.get("test_path"):
            test_set = load_dataset(_resolve_path(ds["test_path"]))
    if ds.get("reshape"):
        train_set = reshape_samples(train_set, ds["reshape"])
        if test_set is not None:
            test_set = reshape_samples(test_set, ds["reshape"])
    return train_set, test_set


def build_multiclass_dataset(ds: dict):
    """(train, test) MulticlassDatasets for bench."""
    src = ds["source"]
    if src == "synth":
        k = ds.get("n_classes") or 3
        train_set = synth_multiclass(ds["shape"], k, ds["n_per_class"],
                                     ds["margin"], ds["noise"], ds["seed"])
        test_set = synth_multiclass(ds["shape"], k,
                                    ds.get("test_n_per_class") or ds["n_per_class"],
                                    ds["margin"], ds["noise"], ds["seed"] + 1)
    elif src == "idx":
        raw = _load_idx_pair(ds, "images", "labels")
        train_set = select_multiclass(raw, ds["classes"], ds.get("per_class"),
                                      ds["seed"])
        raw_test = _load_idx_pair(ds, "test_images", "test_labels")
        _need(raw_test is not None,
              "bench needs 'dataset.test_images'/'test_labels' for idx sources")
        test_set = select_multiclass(raw_test, ds["classes"],
                                     ds.get("test_per_class"), ds["seed"] + 1)
    else:
        raise ConfigError("bench supports dataset sources 'synth' and 'idx'")
    if ds.get("reshape"):
        train_set = reshape_multiclass(train_set, ds["reshape"])
        test_set = reshape_multiclass(test_set, ds["reshape"])
    return train_set, test_set


def make_train_config(cfg: dict, method: str, dims: tuple) -> TrainConfig:
    ranks = _validate_method_ranks(method, list(cfg["ranks"]), dims)
    zero = method in _ZERO_MU
    return TrainConfig(
        kind=_METHOD_KIND[method],
        ranks=ranks,
        mu1=0.0 if zero else cfg["mu1"],
        mu2=0.0 if zero else cfg["mu2"],
        lam=cfg["lambda"],
        tol=cfg["epsilon"],
        max_outer=cfg["max_outer"],
        qp_tol=cfg["qp_tol"],
        seed=cfg["seed"],
        bias_feature=cfg["bias_feature"],
    )


def _maybe_flatten(method, train_set, test_set=None):
    if method in _FLATTEN and train_set.order > 1:
        p = int(np.prod(train_set.dims))
        train_set = reshape_samples(train_set, [p])
        if test_set is not None:
            test_set = reshape_samples(test_set, [p])
    return train_set, test_set


def _maybe_flatten_multi(method, train_set, test_set):
    if method in _FLATTEN and len(train_set.dims) > 1:
        p = int(np.prod(train_set.dims))
        return reshape_multiclass(train_set, [p]), reshape_multiclass(test_set, [p])
    return train_set, test_set


# --- output helpers -----------------------------------------------------------


def _fmt_full(x) -> str:
    """Full-precision CSV cell: repr for floats (round-trip exact)."""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt_full(c) for c in row) + "\n")


def write_run_json(out_dir: str, command: str, resolved: dict, extra: dict | None = None):
    payload = {
        "command": command,
        "config": resolved,
        "version": __version__,
    }
    if extra:
        payload.update(extra)
    with open(os.path.join(out_dir, "run.json"), "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=str)


def _out_dir(args, cfg, command: str) -> str:
    out = args.out or (cfg.get("out_dir") if cfg else None) or os.path.join("runs", command)
    os.makedirs(out, exist_ok=True)
    return out


# --- commands ------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = resolve_config(load_config(args.config))
    if args.seed is not None:
        cfg["seed"] = args.seed
    method = cfg["method"]
    train_set, test_set = build_binary_dataset(cfg["dataset"], cfg["seed"])
    train_set, test_set = _maybe_flatten(method, train_set, test_set)
    tc = make_train_config(cfg, method, train_set.dims)
    out = _out_dir(args, cfg, "train")

    t0 = time.perf_counter()
    model, report = train(train_set, tc)
    wall = time.perf_counter() - t0

    model_path = os.path.join(out, "model.spmd")
    save_model(model_path, model)
    write_csv(os.path.join(out, "report.csv"),
              ["iteration", "objective", "gamma_m", "gamma_v", "rel_change"],
              [[h["iteration"], h["objective"], h["gamma_m"], h["gamma_v"],
                h["rel_change"]] for h in report.history])
    write_csv(os.path.join(out, "blocks.csv"),
              ["step", "block", "objective", "weight_norm"],
              [[i, lab, obj, nrm] for i, (lab, obj, nrm) in enumerate(
                  zip(report.block_labels, report.objectives, report.weight_norms))])

    eval_set = _biased(model, train_set)
    scores = decision_scores(model, eval_set.samples, eval_set.dims)
    acc = float(np.mean(np.where(scores >= 0, 1.0, -1.0) == eval_set.labels))
    lines = [
        f"method          {method}",
        f"kind            {model.kind}",
        f"shape           {'x'.join(map(str, train_set.dims))}",
        f"n_train         {len(train_set)}",
        f"converged       {report.converged}",
        f"iterations      {report.iterations}",
        f"objective       {report.final_objective:.4f}",
        f"gamma_m         {report.gamma_m:.4f}",
        f"gamma_v         {report.gamma_v:.4f}",
        f"train_accuracy  {acc:.4f}",
        f"wall_ms         {wall * 1e3:.1f}",
    ]
    if test_set is not None:
        tscores = decision_scores(model, _biased(model, test_set).samples,
                                  _biased(model, test_set).dims)
        tacc = float(np.mean(np.where(tscores >= 0, 1.0, -1.0) == test_set.labels))
        lines.append(f"test_accuracy   {tacc:.4f}")
    summary = "\n".join(lines) + "\n"
    with open(os.path.join(out, "summary.txt"), "w") as f:
        f.write(summary)
    write_run_json(out, "train", cfg, {"wall_time_s": wall,
                                       "model_file": model_path})
    print(summary, end="")
    print(f"model written to {model_path}")
    return 0


def _biased(model: WeightModel, data: LabeledDataset) -> LabeledDataset:
    if model.bias_feature and data.dims != model.shape:
        return apply_bias(data)
    return data


def cmd_eval(args) -> int:
    if not args.model:
        raise ConfigError("eval needs --model PATH")
    try:
        model = load_model(args.model)
    except FileNotFoundError:
        raise ConfigError(f"model file not found: {args.model}")
    except ValueError as e:
        raise ConfigError(str(e))
    cfg = resolve_config(load_config(args.config), need_method=False)
    data, _ = build_binary_dataset(cfg["dataset"], cfg["seed"])
    if _METHOD_KIND.get(cfg.get("method") or "", "") == "vector" and data.order > 1:
        data, _ = _maybe_flatten(cfg["method"], data, None)
    data = _biased(model, data)
    if data.dims != model.shape:
        raise ConfigError(
            f"dataset shape {data.dims} does not match model shape {model.shape}")
    scores = decision_scores(model, data.samples, data.dims)
    summ = summarize_scores(scores, data.labels)
    acc = float(np.mean(np.where(scores >= 0, 1.0, -1.0) == data.labels))
    out = _out_dir(args, cfg, "eval")
    write_csv(os.path.join(out, "eval.csv"),
              ["n", "accuracy", "gamma_m", "gamma_v"],
              [[len(data), acc, summ.mean, summ.variance]])
    write_run_json(out, "eval", cfg, {"model_file": args.model})
    print(f"n               {len(data)}")
    print(f"accuracy        {acc:.4f}")
    print(f"gamma_m         {summ.mean:.4f}")
    print(f"gamma_v         {summ.variance:.4f}")
    return 0


def cmd_bench(args) -> int:
    cfg = resolve_config(load_config(args.config), need_method=False,
                         need_methods=True)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.workers is not None:
        cfg["workers"] = args.workers
    train_multi, test_multi = build_multiclass_dataset(cfg["dataset"])
    out = _out_dir(args, cfg, "bench")

    rows, text_rows, timings = [], [], {}
    for method in cfg["methods"]:
        mtrain, mtest = _maybe_flatten_multi(method, train_multi, test_multi)
        tc = make_train_config(cfg, method, mtrain.dims)
        t0 = time.perf_counter()
        ensemble = ovo_train(mtrain, tc, workers=cfg["workers"])
        acc_rows, mean_acc = pairwise_accuracy(ensemble, mtest)
        wall = time.perf_counter() - t0
        timings[method] = {"total_s": wall}
        per_pair_n = {p: len(mtrain.binary_view(*p)) for p in ensemble.pairs}
        for r in acc_rows:
            pair = r["pair"]
            rep = ensemble.reports[pair]
            rows.append([method, pair[0], pair[1], per_pair_n[pair], r["n_test"],
                         r["accuracy"], rep.iterations])
            text_rows.append((method, f"{pair[0]}v{pair[1]}", per_pair_n[pair],
                              r["n_test"], r["accuracy"], rep.iterations,
                              rep.wall_time * 1e3))
        rows.append([method, "mean", "", "", "", mean_acc, ""])
        text_rows.append((method, "mean", "", "", mean_acc, "", wall * 1e3))

    write_csv(os.path.join(out, "bench.csv"),
              ["method", "class_a", "class_b", "n_train", "n_test", "accuracy",
               "iterations"], rows)
    with open(os.path.join(out, "timings.json"), "w") as f:
        json.dump(timings, f, indent=2, sort_keys=True)

    header = f"{'method':<12} {'pair':>6} {'n_tr':>6} {'n_te':>6} {'accuracy':>9} {'iters':>6} {'wall_ms':>9}"
    lines = [header, "-" * len(header)]
    for method, pair, ntr, nte, acc, iters, ms in text_rows:
        lines.append(f"{method:<12} {pair:>6} {str(ntr):>6} {str(nte):>6} "
                     f"{acc:>9.4f} {str(iters):>6} {ms:>9.1f}")
    table = "\n".join(lines) + "\n"
    with open(os.path.join(out, "bench.txt"), "w") as f:
        f.write(table)
    write_run_json(out, "bench", cfg)
    print(table, end="")
    return 0


def cmd_check(args) -> int:
    scope = args.scope or "all"
    known = ("all", "lemma1", "lemma2", "theorem1", "theorem2")
    if scope not in known:
        raise ConfigError(f"--scope must be one of {known}, got {scope!r}")
    seed = args.seed if args.seed is not None else 0
    out = _out_dir(args, None, "check")

    reports = []  # (scope, BoundReport, hard)
    if scope in ("all", "lemma1"):
        for rep in theory.lemma1_sweep(1000, seed=seed):
            reports.append(("lemma1", rep, True))
    if scope in ("all", "lemma2"):
        reports.append(("lemma2", theory.lemma2_check(seed=seed), True))
    if scope in ("all", "theorem1"):
        for rep in theory.theorem1_sweep(20, seed=seed):
            reports.append(("theorem1", rep, True))
        for rep in theory.cantelli_sweep(50, seed=seed):
            hard = rep.inputs.get("N", 0) >= 30
            reports.append(("theorem1", rep, hard))
    if scope in ("all", "theorem2"):
        for rep in theory.theorem2_sweep(12, seed=seed):
            reports.append(("theorem2", rep, True))
    if args.inject_fault == "descent-uptick":
        from .trainer import TrainReport

        fake = TrainReport(kind="rank1", n_train=0, seed=0, converged=True,
                           iterations=1, objectives=[1.0, 1.0 + 1e-3],
                           block_labels=["init", "mode1"], weight_norms=[1.0, 1.0],
                           history=[], final_objective=1.0 + 1e-3, gamma_m=0.0,
                           gamma_v=0.0, qp_passes=0, ridge_events=0,
                           clamp_events=0, wall_time=0.0)
        ok = theory.descent_certificate(fake)
        reports.append(("theorem2", theory.BoundReport.make(
            "descent_certificate[injected]", 0.0, None if ok else 1e-3,
            inputs={"injected": True}), True))

    rows = []
    failures = 0
    for scope_name, rep, hard in reports:
        status = "PASS" if rep.holds else ("FAIL" if hard else "WARN")
        if status == "FAIL":
            failures += 1
        rows.append([scope_name, rep.name, rep.bound_value,
                     "" if rep.empirical_value is None else rep.empirical_value,
                     status])
    write_csv(os.path.join(out, "bound_report.csv"),
              ["scope", "name", "bound", "empirical", "status"], rows)

    by_scope = {}
    for scope_name, rep, hard in reports:
        s = by_scope.setdefault(scope_name, [0, 0])
        s[0] += 1
        s[1] += int(rep.holds)
    for scope_name, (total, held) in sorted(by_scope.items()):
        print(f"{scope_name:<10} {held}/{total} checks passed")
    worst = [r for r in rows if r[4] == "FAIL"][:5]
    for r in worst:
        print(f"FAIL {r[1]}: empirical {r[3]} > bound {r[2]}")
    print(f"bound report written to {os.path.join(out, 'bound_report.csv')}")
    if failures:
        raise CheckFailure(f"{failures} hard check(s) failed")
    return 0


# --- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="spmd",
        description="Margin-distribution tensor classifiers: train, eval, "
                    "bench, and theory checks.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        if config_required:
            sp.add_argument("--config", required=True, help="JSON config path")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, help="seed override")

    sp = sub.add_parser("train", help="train one binary model")
    common(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a saved model on a dataset")
    common(sp)
    sp.add_argument("--model", required=True, help="model file from train")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("bench", help="one-vs-one benchmark over methods")
    common(sp)
    sp.add_argument("--workers", type=int, help="parallel pair trainings")
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("check", help="run the theory-check sweeps")
    sp.add_argument("--scope", help="all | lemma1 | lemma2 | theorem1 | theorem2")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--seed", type=int, help="sweep seed")
    sp.add_argument("--inject-fault", dest="inject_fault",
                    choices=["descent-uptick"],
                    help="self-test hook: inject a failing descent fixture")
    sp.set_defaults(fn=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except CheckFailure as e:
        print(f"check failure: {e}", file=sys.stderr)
        return 1
    except (TrainingError, np.linalg.LinAlgError, ValueError, OSError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
