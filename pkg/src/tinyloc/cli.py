"""``tinyloc`` command line: datasets, training, compression and reports.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor

from . import container as C
from .config import ConfigError, RunConfig, load_config, parse_model_name
from .data import (MissingColumnError, SynthConfig, generate_synthetic, load_uji, prepare_inhome,
                   read_stream_csv, read_uji_csv)
from .harness.experiment import (BASELINE, DISTILL, DISTILL_STATIC_Q, DYNAMIC_Q, STATIC_Q,
                                 EvalReport, ExperimentConfig, run_experiment)
from .harness.report import emit_report, emit_rows
from .harness.size import BUDGET_32K, BUDGET_64K, budget_check, model_size
from .quantize import AlreadyQuantizedError, dynamic_quantize_model, quantize_model_static
from .train import TrainConfig, evaluate, train

log = logging.getLogger("tinyloc")


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "tau", None) is not None:
        cfg["quantize"]["tau"] = args.tau
    if getattr(args, "alpha", None) is not None:
        cfg["distill"]["alpha"] = args.alpha
    if getattr(args, "scheme", None) is not None:
        cfg["quantize"]["scheme"] = args.scheme
    if getattr(args, "format", None) is not None:
        cfg["report"]["format"] = args.format
    return cfg


def _write(path, data):
    if path in (None, "-"):
        sys.stdout.write(data if isinstance(data, str) else data.decode())
        return
    mode = "w" if isinstance(data, str) else "wb"
    with open(path, mode) as fh:
        fh.write(data)


def _need_out(args):
    if not args.out:
        raise UsageError("--out PATH is required")
    return args.out


def _synth_config(cfg):
    d = cfg["data"]
    return SynthConfig(room_count=d["rooms"], ap_count=d["aps"], samples_per_room=d["samples_per_room"],
                       test_samples_per_room=d["test_samples_per_room"], noise_std=d["noise_std"],
                       dropout=d["dropout"], seed=cfg.seed, rate_hz=d["rate_hz"],
                       window_len=d["window_len"], stride=d["stride"])


def _print_summary(ds):
    s = ds.summary()
    print(f"sequences train={s['sequences']['train']} val={s['sequences']['val']} "
          f"test={s['sequences']['test']}")
    print(f"K={s['class_count']} D={s['feature_dim']}")
    print("class histogram: " + " ".join(f"{i}:{n}" for i, n in enumerate(s["class_histogram"])))


def _dataset(args, cfg):
    path = getattr(args, "data", None) or cfg["data"]["path"]
    if path:
        return C.load_dataset(path)
    if cfg["data"]["source"] != "synthetic":
        raise UsageError("no dataset file given (--data or [data] path)")
    return generate_synthetic(_synth_config(cfg))


def _train_config(cfg, seed):
    t = cfg["train"]
    return TrainConfig(t["epochs"], t["batch_size"], t["lr"], seed, t["patience"] or None)


# -- verbs ------------------------------------------------------------------
def cmd_synth(args):
    cfg = _config(args)
    ds = generate_synthetic(_synth_config(cfg))
    C.save_dataset(ds, _need_out(args))
    _print_summary(ds)


def cmd_prepare_data(args):
    cfg = _config(args)
    d = cfg["data"]
    src = d["source"]
    if src == "synthetic":
        ds = generate_synthetic(_synth_config(cfg))
    elif src == "uji":
        if not d["uji_train"] or not d["uji_test"]:
            raise UsageError("[data] uji_train and uji_test are required for source = uji")
        ds = load_uji(read_uji_csv(d["uji_train"]), read_uji_csv(d["uji_test"]),
                      d["train_fraction"], cfg.seed, d["cell_size"])
    elif src == "inhome":
        if not d["fingerprint"] or not d["free_living"]:
            raise UsageError("[data] fingerprint and free_living are required for source = inhome")
        read = lambda p: read_stream_csv(p, label_column=d["label_column"])  # noqa: E731
        ds = prepare_inhome([read(p) for p in d["fingerprint"]], [read(p) for p in d["free_living"]],
                            d["rate_hz"], d["horizon"], d["window_len"], d["stride"],
                            d["train_fraction"], cfg.seed)
    else:
        raise UsageError(f"unknown data source {src!r}")
    C.save_dataset(ds, _need_out(args))
    _print_summary(ds)


def cmd_train(args):
    cfg = _config(args)
    ds = _dataset(args, cfg)
    mc = cfg.model_config(ds.feature_dim, ds.class_count, seed=cfg.seed)
    from .models import build_model
    result = train(build_model(mc), ds, _train_config(cfg, cfg.seed))
    model = result.model
    model.meta = {"variant": BASELINE, "seed": cfg.seed}
    C.save_model(model, _need_out(args))
    print(f"{mc.name} params={model.num_params()} val_macro_f1={result.best_val_f1:.4f} "
          f"best_epoch={result.best_epoch} checksum={C.param_checksum(model)[:16]}")


def _calibration(args, cfg):
    ds = _dataset(args, cfg)
    return [s.features for s in ds.train]


def cmd_quantize(args):
    cfg = _config(args)
    model = C.load_model(args.model)
    scheme = cfg["quantize"]["scheme"]
    if scheme not in ("static", "dynamic"):
        raise UsageError(f"unknown scheme {scheme!r}")
    before = model_size(model)
    if scheme == "static":
        q = quantize_model_static(model, _calibration(args, cfg), cfg["quantize"]["tau"],
                                  signed=cfg["quantize"]["signed"])
        variant = DISTILL_STATIC_Q if model.meta.get("variant") == DISTILL else STATIC_Q
        q.meta = {**model.meta, "variant": variant, "tau": cfg["quantize"]["tau"]}
    else:
        q = dynamic_quantize_model(model, signed=cfg["quantize"]["signed"])
        q.meta = {**model.meta, "variant": DYNAMIC_Q}
    after = model_size(q)
    print("before:\n" + before.format())
    print("after:\n" + after.format())
    if after.total_bytes >= before.total_bytes:
        warnings.warn(f"quantization did not reduce the model size "
                      f"({before.total_bytes} B -> {after.total_bytes} B)", RuntimeWarning)
    C.save_model(q, _need_out(args))


def cmd_distill(args):
    cfg = _config(args)
    from .distill import KDConfig, distill_train
    teacher_path = args.teacher or cfg["distill"]["teacher"]
    if not teacher_path:
        raise UsageError("--teacher PATH (or [distill] teacher) is required")
    teacher = C.load_model(teacher_path)
    ds = _dataset(args, cfg)
    if teacher.config.num_classes != ds.class_count:
        raise UsageError(f"class-count mismatch: teacher K={teacher.config.num_classes}, "
                         f"data K={ds.class_count}")
    scfg = cfg.model_config(ds.feature_dim, ds.class_count, seed=cfg.seed)
    alpha = cfg["distill"]["alpha"]
    t = cfg["train"]
    kd = KDConfig(alpha, cfg["distill"]["mode"], teacher.config.name, t["epochs"],
                  t["batch_size"], t["lr"], cfg.seed)
    result = distill_train(teacher, scfg, ds, kd)
    student = result.model
    student.meta.update(seed=cfg.seed, teacher_checksum=C.param_checksum(teacher)[:16])
    out = _need_out(args)
    C.save_model(student, out)
    print(f"{scfg.name} teacher={kd.teacher_id} alpha={alpha} params={student.num_params()} "
          f"val_macro_f1={result.best_val_f1:.4f}")
    if args.hybrid or cfg["distill"]["hybrid"]:
        q = quantize_model_static(student, [s.features for s in ds.train], cfg["quantize"]["tau"])
        q.meta = {**student.meta, "variant": DISTILL_STATIC_Q, "tau": cfg["quantize"]["tau"]}
        root, ext = os.path.splitext(out)
        qpath = f"{root}.static{ext or '.tloc'}"
        C.save_model(q, qpath)
        f1, acc = evaluate(q, ds.val, ds.class_count)
        print(f"hybrid static quantized -> {qpath} val_macro_f1={f1:.4f} "
              f"size={model_size(q).total_bytes} B")


def _eval_one(path, ds, seed, dataset_id):
    from .harness.experiment import error_row
    try:
        model = C.load_model(path)
    except Exception as exc:
        return EvalReport(os.path.basename(path), "", 0, "", 0, 0, "", float("nan"), float("nan"),
                          False, False, seed, dataset_id, error=f"{type(exc).__name__}: {exc}")
    mc = model.config
    meta = getattr(model, "meta", {}) or {}
    variant = meta.get("variant", BASELINE)
    try:
        if mc.input_dim != ds.feature_dim or mc.num_classes != ds.class_count:
            raise ValueError(f"model D={mc.input_dim} K={mc.num_classes} vs data "
                             f"D={ds.feature_dim} K={ds.class_count}")
        f1, acc = evaluate(model, ds.test, ds.class_count)
    except Exception as exc:
        return error_row(seed, dataset_id, mc, variant, exc, model.num_params())
    nbytes = len(C.dump_model(model))
    return EvalReport(mc.name, mc.family, mc.hidden_size, mc.layer_label(), model.num_params(),
                      nbytes, variant, f1, acc, budget_check(nbytes, BUDGET_64K),
                      budget_check(nbytes, BUDGET_32K), seed, dataset_id,
                      teacher=meta.get("teacher", ""), tau=meta.get("tau"), alpha=meta.get("alpha"))


def _eval_rows(args, cfg):
    if not args.models:
        raise UsageError("no model containers given")
    ds = _dataset(args, cfg)
    dataset_id = args.data or "synthetic"
    threads = max(1, int(os.environ.get("TINYLOC_THREADS", "1") or 1))
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(lambda p: _eval_one(p, ds, cfg.seed, dataset_id), args.models))


def cmd_eval(args):
    cfg = _config(args)
    rows = _eval_rows(args, cfg)
    _write(args.out, emit_rows(rows, "md" if cfg["report"]["format"] in ("md", "markdown") else "csv"))


def cmd_report(args):
    cfg = _config(args)
    fmt = cfg["report"]["format"]
    if args.models:
        rows = _eval_rows(args, cfg)
    else:
        if not cfg["report"]["models"]:
            raise UsageError("empty model list")
        models = [parse_model_name(m) for m in cfg["report"]["models"]]
        ds = _dataset(args, cfg)
        rows = run_experiment(ExperimentConfig(
            models, tuple(cfg["report"]["variants"]), cfg.seed, ds,
            args.data or cfg["data"]["path"] or "synthetic",
            _train_config(cfg, cfg.seed), cfg["quantize"]["tau"], cfg["distill"]["alpha"],
            cfg["distill"]["mode"]))
        if args.rows:
            _write(args.rows, emit_rows(rows, "csv"))
    text = emit_report(rows, fmt)
    provenance = json.dumps(cfg.to_dict(), sort_keys=True, indent=1)
    if fmt == "md":
        text += f"\nRun configuration (seed {cfg.seed}):\n\n```json\n{provenance}\n```\n"
    elif args.out not in (None, "-"):
        _write(args.out + ".config.json", provenance + "\n")
    _write(args.out, text)


def cmd_size(args):
    if not args.models:
        raise UsageError("no model containers given")
    for path in args.models:
        sb = model_size(C.load_model(path))
        on_disk = os.path.getsize(path)
        print(f"== {path}")
        print(sb.format())
        print(f"64 KB budget: {'pass' if budget_check(on_disk, BUDGET_64K) else 'FAIL'}; "
              f"32 KB budget: {'pass' if budget_check(on_disk, BUDGET_32K) else 'FAIL'}")


# -- parser -----------------------------------------------------------------
def build_parser():
    p = argparse.ArgumentParser(prog="tinyloc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name, fn, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", metavar="PATH")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", metavar="PATH")
        s.set_defaults(fn=fn)
        return s

    verb("synth", cmd_synth, "generate the synthetic dataset")
    verb("prepare-data", cmd_prepare_data, "clean, window and scale raw data")
    s = verb("train", cmd_train, "train a baseline model")
    s.add_argument("--data", metavar="PATH")
    s = verb("quantize", cmd_quantize, "post-training quantization of a model container")
    s.add_argument("model")
    s.add_argument("--scheme", choices=("static", "dynamic"))
    s.add_argument("--tau", type=float)
    s.add_argument("--data", metavar="PATH", help="calibration data (static scheme)")
    s = verb("distill", cmd_distill, "train a student from a teacher container")
    s.add_argument("--teacher", metavar="PATH")
    s.add_argument("--data", metavar="PATH")
    s.add_argument("--alpha", type=float)
    s.add_argument("--tau", type=float)
    s.add_argument("--hybrid", action="store_true", help="also write a static-quantized student")
    for name, fn, help_ in (("eval", cmd_eval, "evaluate model containers"),
                            ("report", cmd_report, "results tables from containers or a grid")):
        s = verb(name, fn, help_)
        s.add_argument("models", nargs="*")
        s.add_argument("--data", metavar="PATH")
        s.add_argument("--format", choices=("csv", "md"))
        if name == "report":
            s.add_argument("--rows", metavar="PATH", help="also write the raw rows as csv")
    s = sub.add_parser("size", help="byte-exact size breakdown of model containers")
    s.add_argument("models", nargs="*")
    s.set_defaults(fn=cmd_size)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("default")
            try:
                args.fn(args)
            finally:
                for w in caught:
                    print(f"warning: {w.message}", file=sys.stderr)
    except (UsageError, ConfigError, MissingColumnError, FileNotFoundError,
            AlreadyQuantizedError) as exc:
        msg = f"missing column {exc.args[0]!r}" if isinstance(exc, MissingColumnError) else str(exc)
        print(f"tinyloc: error: {msg}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"tinyloc: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
