"""Command-line entry point: ``ttlbp {train,gradcheck,estimate-cost,sweep,convert-dvs}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Settings resolve
as CLI flag > ``--config`` JSON file > built-in default, and the effective
settings are written next to every output.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import encodings, gradcheck, sweep
from .engine.config import TrainConfig
from .engine.trainer import TrainingDiverged, fit
from .errors import ArchitectureError, ConfigError, OracleSizeError
from .neuron import LifParams
from .topology import load_arch, normalize_mode

log = logging.getLogger("ttlbp")

SYNTHETIC_DEFAULT = {
    "format": "synthetic", "num_classes": 2, "shape": [1, 8, 8], "T": 10,
    "samples_per_class": 20, "test_samples_per_class": 100, "seed": 0, "noise": 0.4,
}

DEFAULTS = {
    "arch": "synth", "data": "synthetic", "k": None, "n": "all", "T": None, "epochs": 50,
    "seed": 0, "classifier": "trainable", "batch_size": 8, "lr": 0.2, "momentum": 0.9,
    "dropout": 0.0, "tau": 0.8, "u_th": 0.5, "theta": None, "a": 1.0, "init_scale": 1.0,
    "lr_decay_every": 20, "lr_decay_factor": 0.5, "dtype": "float64",
}


class UsageError(Exception):
    pass


# ---- argument parsing ---------------------------------------------------------

def _add_common(p, *, training=True):
    p.add_argument("--config", help="JSON file of settings (overridden by flags)")
    p.add_argument("--arch", help="architecture JSON path or bundled name")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--classifier", choices=["trainable", "random"])
    p.add_argument("-v", "--verbose", action="store_true")
    if training:
        p.add_argument("--data", help="dataset manifest JSON, or 'synthetic'")
        p.add_argument("--epochs", type=int)
        p.add_argument("--T", type=int, dest="T", help="time window (default: from dataset or 10)")
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--lr", type=float)
        p.add_argument("--momentum", type=float)
        p.add_argument("--dropout", type=float)
        p.add_argument("--tau", type=float)
        p.add_argument("--u-th", type=float, dest="u_th")
        p.add_argument("--theta", type=float)
        p.add_argument("--a", type=float, help="surrogate window width")
        p.add_argument("--init-scale", type=float, dest="init_scale")
        p.add_argument("--dtype", choices=["float32", "float64"])


def build_parser():
    parser = argparse.ArgumentParser(prog="ttlbp", description="Temporally truncated local backpropagation for SNNs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one (k, n) configuration")
    _add_common(p)
    p.add_argument("--k", help="truncation interval (integer or 'T')")
    p.add_argument("--n", help="block length in trainable layers (integer or 'all')")

    p = sub.add_parser("gradcheck", help="compare engine gradients with the brute-force oracle")
    _add_common(p, training=False)
    p.add_argument("--T", type=int, dest="T", help="time window (default 4)")
    p.add_argument("--batch-size", type=int, dest="batch_size", help="default 2")
    p.add_argument("--k", help="comma list (default 1,2,T)")
    p.add_argument("--n", help="comma list (default 1,2,all)")
    p.add_argument("--tolerance", type=float, default=gradcheck.TOLERANCE)
    p.add_argument("--fd-instances", type=int, default=100, dest="fd_instances")

    p = sub.add_parser("estimate-cost", help="analytic cost table over a (k, n) grid")
    _add_common(p, training=False)
    p.add_argument("--T", type=int, dest="T")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--k", help="comma list of k (default: T)")
    p.add_argument("--n", help="comma list of n ('all' allowed, default: all)")
    p.add_argument("--modes", help="comma list of classifier modes (default: --classifier)")
    p.add_argument("--sparsity", help="JSON file with 'layers' and optional 'classifiers' densities")
    p.add_argument("--accuracy", help="CSV with columns k,n,classifier_mode,accuracy for FoM")

    p = sub.add_parser("sweep", help="train a (k, n) grid and rank by FoM")
    _add_common(p)
    p.add_argument("--k", help="comma list of k")
    p.add_argument("--n", help="comma list of n")
    p.add_argument("--modes", help="comma list of classifier modes")
    p.add_argument("--harvest-sparsity", action="store_true", dest="harvest", default=None,
                   help="measure spike densities from the trained nets for the cost model")

    p = sub.add_parser("convert-dvs", help="event CSV to binary frame sequence")
    p.add_argument("events", help="event CSV (header t_us,x,y,p)")
    p.add_argument("--dt", type=float, required=True, help="window length in ms")
    p.add_argument("--T", type=int, dest="T", required=True, help="number of frames")
    p.add_argument("--sensor", help="sensor size HxW (default: from events)")
    p.add_argument("--label", type=int)
    p.add_argument("--out", required=True, help="output .npz")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


# ---- settings resolution ----------------------------------------------------------

def resolve(args, defaults=DEFAULTS):
    """Merge defaults, the config file and explicit flags (in rising priority)."""
    settings = dict(defaults)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            file_settings = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {path}: {e}") from None
        unknown = set(file_settings) - set(defaults) - {"ks", "ns", "modes", "harvest", "sparsity", "accuracy"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        settings.update(file_settings)
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config", "verbose"):
            settings[key] = value
    return settings


def _load_arch(name):
    try:
        return load_arch(name)
    except FileNotFoundError:
        raise UsageError(f"architecture not found: {name}") from None
    except (ArchitectureError, ValueError, KeyError) as e:
        raise UsageError(f"invalid architecture {name}: {e}") from None


def _load_data(source):
    if isinstance(source, dict):
        return encodings.dataset_from_manifest(source)
    if source == "synthetic":
        return encodings.dataset_from_manifest(SYNTHETIC_DEFAULT)
    if not Path(source).exists():
        raise UsageError(f"dataset manifest not found: {source}")
    return encodings.load_manifest(source)


def _int_or(value, word, fallback):
    if value is None:
        return None
    if isinstance(value, int):
        return value
    text = str(value).strip()
    if text.lower() == word:
        return fallback
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"expected an integer or '{word}', got {value!r}") from None


def _int_list(value, word, fallback):
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        items = value
    else:
        items = str(value).split(",")
    return [_int_or(v, word, fallback) for v in items]


def _data_T(ds, settings):
    if settings.get("T"):
        return int(settings["T"])
    if ds.train_x.ndim == 5:
        return ds.train_x.shape[1]
    return int(ds.meta.get("T", 10))


def make_config(settings, arch, T):
    k = _int_or(settings.get("k"), "t", T)
    n = _int_or(settings.get("n"), "all", arch.num_trainable)
    try:
        lif = LifParams(tau=settings["tau"], u_th=settings["u_th"], theta=settings.get("theta"), a=settings["a"])
        return TrainConfig(
            k=T if k is None else k, n=arch.num_trainable if n is None else n, T=T,
            batch_size=settings["batch_size"], learning_rate=settings["lr"], momentum=settings["momentum"],
            dropout_rate=settings["dropout"], lr_decay_factor=settings["lr_decay_factor"],
            lr_decay_every=settings["lr_decay_every"], lif=lif,
            classifier_mode=normalize_mode(settings["classifier"]), seed=settings["seed"],
            epochs=settings["epochs"], init_scale=settings["init_scale"], dtype=settings["dtype"],
        )
    except (ConfigError, ValueError) as e:
        raise UsageError(str(e)) from None


def _check_n(arch, n):
    if not 1 <= n <= arch.num_trainable:
        raise UsageError(f"n={n} outside [1, {arch.num_trainable}] for {arch.name or 'architecture'}")


def _out_dir(settings, default):
    out = Path(settings.get("out") or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _recorded(settings):
    # the output location is left out so that runs in different directories compare equal
    return {k: v for k, v in settings.items() if k != "out"}


def _echo(settings, out, **extra):
    record = _recorded(settings)
    record.update(extra)
    sweep.write_json(record, out / "run.json")


# ---- commands -----------------------------------------------------------------------

def cmd_train(args):
    s = resolve(args)
    arch = _load_arch(s["arch"])
    ds = _load_data(s["data"])
    cfg = make_config(s, arch, _data_T(ds, s))
    _check_n(arch, cfg.n)
    out = _out_dir(s, "runs/train")
    _echo(s, out, effective_config=cfg.to_dict(), config_hash=cfg.digest(), arch=arch.to_dict())

    def report(row):
        log.info("epoch %d lr %.4g train_acc %.4f test_acc %s", row["epoch"], row["lr"], row["train_acc"], row["test_acc"])

    try:
        result = fit(arch, ds, cfg, out_dir=out, on_epoch=report)
    except TrainingDiverged as e:
        sweep.write_json({"error": str(e), "snapshot": e.snapshot}, out / "diverged.json")
        print(f"training diverged: {e} (snapshot in {out / 'diverged.json'})", file=sys.stderr)
        return 1
    last = result.metrics[-1] if result.metrics else {}
    print(f"k={cfg.k} n={cfg.n} epochs={cfg.epochs} train_acc={last.get('train_acc')} "
          f"test_acc={last.get('test_acc')} -> {out}")
    return 0


def cmd_gradcheck(args):
    s = resolve(args, {**DEFAULTS, "arch": "toy", "T": 4, "batch_size": 2, "n": None})
    arch = _load_arch(s["arch"])
    T = s["T"]
    ks = _int_list(s.get("k"), "t", T)
    ns = _int_list(s.get("n"), "all", arch.num_trainable)
    for n in ns or []:
        _check_n(arch, n)
    for k in ks or []:
        if not 1 <= k <= T:
            raise UsageError(f"k={k} outside [1, {T}]")
    try:
        reports = gradcheck.run_grid(arch, T, s["batch_size"], s["seed"], ks, ns)
    except OracleSizeError as e:
        print(f"refusing: {e}", file=sys.stderr)
        return 2
    fd = gradcheck.classifier_fd_check(args.fd_instances, s["seed"])
    tol = args.tolerance
    ok = True
    rows = []
    for r in reports:
        status = "PASS" if r.passed(tol) else "FAIL"
        ok &= r.passed(tol)
        print(f"{status} k={r.k} n={r.n} max_rel_error={r.max_rel_error:.3e} worst={r.worst} nonzero={r.nonzero}")
        if not r.passed(tol):
            for interval, name, err in r.per_array:
                if err > tol:
                    print(f"    {name} interval {interval}: rel_error={err:.3e}")
        rows.append({"k": r.k, "n": r.n, "max_rel_error": r.max_rel_error, "worst": r.worst, "passed": int(r.passed(tol))})
    fd_ok = fd <= 1e-6
    ok &= fd_ok
    print(f"{'PASS' if fd_ok else 'FAIL'} classifier finite-difference max_rel_error={fd:.3e}")
    if s.get("out"):
        out = _out_dir(s, "")
        sweep.write_csv(rows, out / "gradcheck.csv")
        _echo(s, out, classifier_fd_rel_error=fd, passed=ok)
    return 0 if ok else 1


def _parse_sparsity(path):
    if path is None:
        return None, None
    if not Path(path).exists():
        raise UsageError(f"sparsity file not found: {path}")
    d = json.loads(Path(path).read_text())
    return d.get("layers"), d.get("classifiers")


def _parse_accuracy(path, arch):
    if path is None:
        return None
    if not Path(path).exists():
        raise UsageError(f"accuracy table not found: {path}")
    table = {}
    for row in sweep.read_csv(path):
        n = _int_or(row["n"], "all", arch.num_trainable)
        table[(int(row["k"]), n, normalize_mode(row.get("classifier_mode") or "trainable"))] = float(row["accuracy"])
    return table


def cmd_estimate(args):
    s = resolve(args, {**DEFAULTS, "arch": "lenet1", "T": 20, "batch_size": 128, "n": None})
    arch = _load_arch(s["arch"])
    T = int(s["T"])
    ks = _int_list(s.get("k"), "t", T) or [T]
    ns = _int_list(s.get("n"), "all", arch.num_trainable) or [arch.num_trainable]
    for n in ns:
        _check_n(arch, n)
    for k in ks:
        if not 1 <= k <= T:
            raise UsageError(f"k={k} outside [1, {T}]")
    modes = (s.get("modes") or s["classifier"])
    modes = modes.split(",") if isinstance(modes, str) else list(modes)
    try:
        modes = [normalize_mode(m) for m in modes]
    except ConfigError as e:
        raise UsageError(str(e)) from None
    layer_sp, cls_sp = _parse_sparsity(s.get("sparsity"))
    acc = _parse_accuracy(s.get("accuracy"), arch)
    rows = sweep.cost_table(arch, ks, ns, modes, T, s["batch_size"], layer_sp, cls_sp, acc)
    out = _out_dir(s, "runs/cost")
    sweep.write_csv(rows, out / "cost.csv", sweep.COST_COLUMNS)
    sweep.write_json({"settings": _recorded(s), "arch": arch.to_dict(), "rows": rows}, out / "cost.json")
    _echo(s, out)
    for r in rows:
        print(f"k={r['k']} n={r['n']} mode={r['classifier_mode']} memory={r['ratio_memory']:.4f} "
              f"access={r['ratio_memory_access']:.4f} adds={r['ratio_additions']:.4f} macs={r['ratio_macs']:.4f}")
    return 0


def cmd_sweep(args):
    s = resolve(args)
    arch = _load_arch(s["arch"])
    ds = _load_data(s["data"])
    T = _data_T(ds, s)
    base = make_config({**s, "k": T, "n": "all"}, arch, T)
    ks = _int_list(s.get("k") or s.get("ks"), "t", T) or [T]
    ns = _int_list(s.get("n") or s.get("ns"), "all", arch.num_trainable) or [arch.num_trainable]
    for n in ns:
        _check_n(arch, n)
    modes = s.get("modes") or s["classifier"]
    modes = modes.split(",") if isinstance(modes, str) else list(modes)
    try:
        modes = [normalize_mode(m) for m in modes]
    except ConfigError as e:
        raise UsageError(str(e)) from None
    grid = [(k, n) for k in ks for n in ns]
    rows = sweep.run_sweep(arch, ds, base, grid, modes, harvest=bool(s.get("harvest")))
    out = _out_dir(s, "runs/sweep")
    sweep.write_csv(rows, out / "sweep.csv", sweep.SWEEP_COLUMNS)
    _echo(s, out, effective_config=base.to_dict(), arch=arch.to_dict())
    for r in rows:
        flag = " *" if r["best"] else ""
        err = f" error={r['error']}" if r["error"] else ""
        print(f"#{r['rank']} k={r['k']} n={r['n']} mode={r['classifier_mode']} acc={r['accuracy']} fom={r['fom']}{flag}{err}")
    return 0


def cmd_convert(args):
    path = Path(args.events)
    if not path.exists():
        raise UsageError(f"event file not found: {path}")
    shape = None
    if args.sensor:
        try:
            h, w = (int(v) for v in args.sensor.lower().split("x"))
        except ValueError:
            raise UsageError(f"--sensor expects HxW, got {args.sensor!r}") from None
        shape = (h, w)
    if args.dt <= 0 or args.T < 1:
        raise UsageError("--dt must be positive and --T at least 1")
    stream = encodings.load_event_csv(path, shape, args.label)
    if len(stream) == 0:
        print(f"warning: {path} holds no events; writing {args.T} empty frames", file=sys.stderr)
    seq = encodings.dvs_to_frames(stream, args.dt, args.T)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    encodings.write_frames(seq, out)
    print(f"{len(stream)} events -> {seq.frames.shape} frames at {out}")
    return 0


COMMANDS = {"train": cmd_train, "gradcheck": cmd_gradcheck, "estimate-cost": cmd_estimate,
            "sweep": cmd_sweep, "convert-dvs": cmd_convert}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"ttlbp {args.command}: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"ttlbp {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
