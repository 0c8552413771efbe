"""Command-line entry point: ``denseshift <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error (missing or
malformed dataset or model file), 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, modelfile
from .config import INITS, WEIGHT_KINDS, RunConfig
from .errors import ConfigError, ConversionError, DataError, FormatError, NumericError
from .freeze import read_cosine_csv, read_trace_csv, replay_trace, write_cosine_csv, write_trace_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("denseshift")


def _override(cfg: RunConfig, args) -> RunConfig:
    """Apply command-line flags on top of a loaded config."""
    t, m, d, i = cfg.train, cfg.model, cfg.data, cfg.init
    pick = lambda name: getattr(args, name, None)  # noqa: E731
    tv = {k: pick(a) for k, a in (("epochs", "epochs"), ("base_lr", "lr"), ("batch_size", "batch_size"),
                                  ("seed", "seed"), ("weight_decay", "weight_decay"),
                                  ("momentum", "momentum"))}
    mv = {"arch": pick("arch"), "weight": pick("weight"), "bits": pick("bits")}
    dv = {"dataset": pick("dataset"), "root": pick("data_root"), "train_limit": pick("train_limit"),
          "test_limit": pick("test_limit")}
    iv = {"strategy": pick("init"), "sigma": pick("sigma")}
    cfg = replace(
        cfg,
        train=replace(t, **{k: v for k, v in tv.items() if v is not None}),
        model=replace(m, **{k: v for k, v in mv.items() if v is not None}),
        data=replace(d, **{k: v for k, v in dv.items() if v is not None}),
        init=replace(i, **{k: v for k, v in iv.items() if v is not None}),
    )
    if pick("output_dir"):
        cfg = replace(cfg, output_dir=args.output_dir)
    return cfg


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return _override(cfg, args)


def cmd_train(args):
    cfg = _run_config(args)
    if args.print_config:
        print(cfg.to_json())
        return EXIT_OK
    from .run import train_run

    res = train_run(cfg, cfg.output_dir)
    print(f"{res.summary_line()} model={res.files['model']}")
    return EXIT_OK


def cmd_sweep(args):
    """Train every init x epochs combination into ``output_dir/<init>_e<epochs>``."""
    from .run import train_run

    base = _run_config(args)
    inits = args.inits.split(",")
    epochs = [int(e) for e in args.epoch_list.split(",")]
    out = Path(base.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for init in inits:
        if init not in INITS:
            raise ConfigError(f"unknown init {init!r}")
        for e in epochs:
            cfg = replace(base, train=replace(base.train, epochs=e), init=replace(base.init, strategy=init))
            res = train_run(cfg, out / f"{init}_e{e}")
            rows.append((init, e, res.accuracy, res.checksum))
            print(f"init={init} epochs={e} {res.summary_line()}", flush=True)
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("init", "epochs", "accuracy", "checksum"))
        w.writerows(rows)
    return EXIT_OK


def _eval_data(args, meta):
    from .run import load_data

    dataset = args.dataset or meta.get("dataset")
    if dataset is None:
        raise ConfigError("model does not record its dataset; pass --dataset")
    seed = meta.get("seed", 0)
    if args.split == "train":
        return load_data(dataset, args.data_root, train_limit=args.limit, seed=seed)[0]
    return load_data(dataset, args.data_root, test_limit=args.limit, seed=seed)[1]


def cmd_eval(args):
    from .run import evaluate, write_confusion_csv

    net, meta = modelfile.load(args.model)
    data = _eval_data(args, meta)
    if data.images.shape[1:] != tuple(net.spec.input_shape):
        raise ConfigError(f"model expects inputs {tuple(net.spec.input_shape)}, "
                          f"dataset has {data.images.shape[1:]}")
    acc, _, cm = evaluate(net, data, kernel=args.kernel)
    out = Path(args.confusion) if args.confusion else Path(args.model).with_name("confusion.csv")
    write_confusion_csv(out, cm)
    print(f"accuracy={acc:.4f} n={len(data)} kernel={args.kernel} confusion={out}")
    return EXIT_OK


def cmd_convert(args):
    from .convert import convert_network, is_zero_free, verify_equivalence

    net, meta = modelfile.load(args.model_in, dtype="float64")
    if not net.spec.quantized_layers():
        raise ConversionError("input model has no shift layers")
    out = convert_network(net)
    rep = verify_equivalence(net, out, n_inputs=args.n_inputs, tol=args.tol, seed=args.seed)
    report = {**rep.to_dict(), "zero_free": is_zero_free(out)}
    meta = {**meta, "equivalence": report}
    digest = modelfile.save(args.model_out, out, meta)
    print(json.dumps({**report, "checksum": digest, "model": str(args.model_out)}, sort_keys=True))
    return EXIT_OK if rep.passed else EXIT_NUMERIC


def _pin_single_cpu():
    if hasattr(os, "sched_setaffinity"):
        try:
            cpus = sorted(os.sched_getaffinity(0))
            os.sched_setaffinity(0, {cpus[0]})
        except OSError:
            log.warning("could not pin to a single CPU")


def cmd_bench(args):
    from .kernel.bench import bench

    _pin_single_cpu()
    rep = bench(length=args.length, trials=args.trials, bits=args.bits, warmup=args.warmup,
                zero_fraction=args.zero_fraction, seed=args.seed)
    print(rep.to_json())
    return EXIT_OK


def cmd_export_traces(args):
    """Consolidate a run directory's metric logs into stable-schema CSVs."""
    from .engine.spec import NetworkSpec
    from .run import CONFIG_FILE, COSINE_FILE, HISTORY_FILE, HISTORY_HEADER, NETWORK_FILE, TRACE_FILE

    run = Path(args.run_dir)
    needed = [CONFIG_FILE, NETWORK_FILE, HISTORY_FILE, COSINE_FILE, TRACE_FILE]
    missing = [n for n in needed if not (run / n).is_file()]
    if missing:
        raise DataError(f"{run}: missing metric logs {missing}")
    out = Path(args.out) if args.out else run / "export"
    out.mkdir(parents=True, exist_ok=True)
    spec = NetworkSpec.from_dict(json.loads((run / NETWORK_FILE).read_text()))
    cos = read_cosine_csv(run / COSINE_FILE)
    write_cosine_csv(out / "freezing_cosine.csv", sorted(cos, key=lambda r: (r[0], r[1])))
    records = read_trace_csv(run / TRACE_FILE)
    layer_bias = {i: (l.weight.bits, l.weight.exponent_bias) for i, l in enumerate(spec.layers)
                  if l.kind in ("conv2d", "linear") and l.weight.kind == "dense_shift"}
    T = max((len(r.w_scale) for r in records), default=0)
    write_trace_csv(out / "latent_traces.csv", records, T)
    replay_ok = True
    if records:
        replayed = replay_trace(records, layer_bias)
        replay_ok = all(float(a) == r.w_shift for a, r in zip(replayed, records))
    with open(run / HISTORY_FILE, newline="") as src, open(out / "training_curve.csv", "w", newline="") as dst:
        rd = csv.reader(src)
        header = tuple(next(rd, ()))
        if header != HISTORY_HEADER:
            raise DataError(f"{run / HISTORY_FILE}: unexpected header {header}")
        w = csv.writer(dst)
        w.writerow(HISTORY_HEADER)
        w.writerows(rd)
    print(json.dumps({"out": str(out), "cosine_rows": len(cos), "trace_rows": len(records),
                      "replay_ok": replay_ok}, sort_keys=True))
    return EXIT_OK if replay_ok else EXIT_NUMERIC


def _add_run_flags(p):
    p.add_argument("--config", help="JSON run config; flags below override it")
    p.add_argument("--dataset", choices=("mnist", "cifar10", "blobs"))
    p.add_argument("--data-root", help="directory holding the dataset files")
    p.add_argument("--train-limit", type=int)
    p.add_argument("--test-limit", type=int)
    p.add_argument("--arch", choices=("lenet", "small_cnn", "mlp"))
    p.add_argument("--weight", choices=WEIGHT_KINDS)
    p.add_argument("--bits", type=int, choices=(2, 3, 4))
    p.add_argument("--init", choices=INITS)
    p.add_argument("--sigma", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")


def build_parser():
    ap = argparse.ArgumentParser(prog="denseshift", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--verbose", "-v", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network and write a run directory")
    _add_run_flags(p)
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train over init strategies x epoch budgets")
    _add_run_flags(p)
    p.add_argument("--inits", default="kaiming,low_variance")
    p.add_argument("--epoch-list", default="1,2")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="accuracy and confusion matrix of a model file")
    p.add_argument("model")
    p.add_argument("--dataset", choices=("mnist", "cifar10", "blobs"))
    p.add_argument("--data-root")
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.add_argument("--limit", type=int)
    p.add_argument("--kernel", choices=("float", "packed"), default="float")
    p.add_argument("--confusion", help="CSV path (default: confusion.csv next to the model)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("convert", help="rewrite a shift network as a zero-free network")
    p.add_argument("model_in")
    p.add_argument("model_out")
    p.add_argument("--n-inputs", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("bench", help="latency of the shift and DenseShift MAC kernels")
    p.add_argument("--bits", type=int, choices=(2, 3, 4), default=4)
    p.add_argument("--length", type=int, default=4096)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--zero-fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export-traces", help="consolidate a run directory's metric CSVs")
    p.add_argument("run_dir")
    p.add_argument("--out", help="output directory (default: <run_dir>/export)")
    p.set_defaults(func=cmd_export_traces)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ConversionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
