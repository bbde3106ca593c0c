"""Command line entry point: ``dppacbayes <subcommand>``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 a run
diverged and ``--strict`` was given.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
import urllib.request
from dataclasses import fields
from pathlib import Path

from .. import __version__
from ..data import MNIST_FILES, MNIST_MIRROR, DataError, SynthConfig, randomize_labels, synth_generate, write_synth_csv
from .config import ConfigError, ExperimentConfig, cell_seed
from .plots import emit_plots
from .report import read_csv, read_sidecar, recompute, write_csv
from .sweep import run_sweep

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 2, 3, 4

log = logging.getLogger("dppacbayes")


def _parse_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def _list_of(conv):
    def parse(s):
        return [conv(x) for x in s.split(",") if x.strip()]
    return parse


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment config; flags override it")
    defaults = ExperimentConfig()
    for f in fields(ExperimentConfig):
        default = getattr(defaults, f.name)
        if isinstance(default, bool):
            conv = _parse_bool
        elif isinstance(default, list):
            conv = _list_of(str if f.name == "label_modes" else int if f.name in ("seeds", "hidden") else float)
        elif isinstance(default, (int, float, str)):
            conv = type(default)
        else:
            continue
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=conv, default=None,
                       help=f"(default: {default})")


def _config_from_args(args, **forced) -> ExperimentConfig:
    base = ExperimentConfig.from_json(args.config).to_dict() if args.config else {}
    for f in fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    base.update(forced)
    return ExperimentConfig.from_dict(base)


def _progress(i, n, cell):
    mode, tau, seed = cell
    log.info("[%d/%d] %s labels, tau=%g, seed=%d", i, n, mode, tau, seed)


def _run_and_write(cfg: ExperimentConfig, out: Path, plots_dir, strict: bool, iterate_dir=None) -> int:
    reports, failures = run_sweep(cfg, iterate_dir=iterate_dir, progress=_progress)
    sidecar = {"config": cfg.to_dict(), "delta": cfg.delta, "m": None, "failures": failures,
               "version": __version__}
    if reports:
        from .sweep import load_data
        sidecar["m"] = len(load_data(cfg, cfg.seeds[0], cfg.label_modes[0])[0])
    write_csv(reports, out, sidecar)
    print(f"wrote {len(reports)} rows to {out}")
    if plots_dir is not None and any(r.completed for r in reports):
        for p in emit_plots(reports, plots_dir, delta=cfg.delta):
            print(f"wrote {p}")
    if failures:
        for f in failures:
            print(f"diverged: {f}", file=sys.stderr)
        if strict:
            return EXIT_DIVERGED
    return 0


def cmd_synth_gen(args) -> int:
    cfg = SynthConfig(args.n_train, args.n_heldout, args.d, args.seed, args.hyperplane)
    train, heldout, w_star = synth_generate(cfg)
    if args.label_mode == "random":
        train = randomize_labels(train, seed=cell_seed(args.seed, "labels", "train"))
        heldout = randomize_labels(heldout, seed=cell_seed(args.seed, "labels", "heldout"))
    args.out.mkdir(parents=True, exist_ok=True)
    meta = {"seed": args.seed, "n_train": args.n_train, "n_heldout": args.n_heldout, "d": args.d,
            "hyperplane": args.hyperplane, "w_star": [float(v) for v in w_star]}
    for ds, name in ((train, "train.csv"), (heldout, "heldout.csv")):
        print(f"wrote {write_synth_csv(ds, args.out / name, meta)}")
    return 0


def cmd_train(args) -> int:
    forced = {"procedure": "one-stage"}
    if args.tau is not None:
        forced["taus"] = [args.tau]
    return _single(args, forced)


def cmd_train2(args) -> int:
    forced = {"procedure": "two-stage"}
    if args.tau2 is not None:
        forced["tau2s"] = [args.tau2]
    return _single(args, forced)


def _single(args, forced) -> int:
    if args.seed is not None:
        forced["seeds"] = [args.seed]
    if args.label_mode is not None:
        forced["label_modes"] = [args.label_mode]
    cfg = _config_from_args(args, **forced)
    plots = None if args.no_plots else (args.plots or args.out.parent)
    return _run_and_write(cfg, args.out, plots, args.strict, args.iterates)


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    out = args.out or Path("results") / f"{cfg.dataset}_{cfg.procedure}.csv"
    plots = None if args.no_plots else (args.plots or out.parent)
    return _run_and_write(cfg, out, plots, args.strict, args.iterates)


def cmd_bound(args) -> int:
    side = read_sidecar(args.csv)
    m = args.m if args.m is not None else side.get("m")
    delta = args.delta if args.delta is not None else side.get("delta", 0.05)
    if m is None:
        raise ConfigError("m is not recorded next to the CSV; pass --m")
    reports = [recompute(r, int(m), float(delta), optimize=args.optimize_beta,
                         lever_variant=args.lever_variant) for r in read_csv(args.csv)]
    out = args.out or args.csv
    write_csv(reports, out, dict(side, m=int(m), delta=float(delta)))
    print(f"wrote {len(reports)} rows to {out}")
    return 0


def cmd_plot(args) -> int:
    reports = read_csv(args.csv)
    delta = read_sidecar(args.csv).get("delta")
    for p in emit_plots(reports, args.out_dir or args.csv.parent, delta=delta):
        print(f"wrote {p}")
    return 0


def cmd_mnist_fetch(args) -> int:
    args.dest.mkdir(parents=True, exist_ok=True)
    for name, md5 in MNIST_FILES.items():
        target = args.dest / name
        if not target.exists():
            print(f"downloading {name}")
            try:
                urllib.request.urlretrieve(args.mirror + name, target)
            except OSError as exc:
                raise DataError(f"download of {name} failed: {exc}") from exc
        digest = hashlib.md5(target.read_bytes()).hexdigest()
        if digest != md5:
            target.unlink()
            raise DataError(f"checksum mismatch for {name}: {digest} != {md5}")
        print(f"ok {target}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dppacbayes", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("synth-gen", help="generate a SYNTH train/heldout pair as CSV")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-train", type=int, default=50)
    g.add_argument("--n-heldout", type=int, default=100)
    g.add_argument("--d", type=int, default=4)
    g.add_argument("--hyperplane", choices=("abs-normal", "gaussian"), default="abs-normal")
    g.add_argument("--label-mode", choices=("true", "random"), default="true")
    g.add_argument("--out", type=Path, default=Path("synth"))
    g.set_defaults(func=cmd_synth_gen)

    for name, func, tau_flag, help_ in (
        ("train", cmd_train, "--tau", "one-stage SGLD at a fixed tau"),
        ("train2", cmd_train2, "--tau2", "two-stage SGLD with a private prior"),
    ):
        t = sub.add_parser(name, help=help_)
        _add_config_flags(t)
        t.add_argument(tau_flag, type=float)
        t.add_argument("--seed", type=int)
        t.add_argument("--label-mode", choices=("true", "random"))
        t.add_argument("--out", type=Path, default=Path(f"results/{name}.csv"))
        t.add_argument("--plots", type=Path)
        t.add_argument("--no-plots", action="store_true")
        t.add_argument("--iterates", type=Path, help="dump the posterior iterate window here")
        t.add_argument("--strict", action="store_true")
        t.set_defaults(func=func)

    s = sub.add_parser("sweep", help="run the configured procedure over its tau grid")
    _add_config_flags(s)
    s.add_argument("--out", type=Path)
    s.add_argument("--plots", type=Path)
    s.add_argument("--no-plots", action="store_true")
    s.add_argument("--iterates", type=Path)
    s.add_argument("--strict", action="store_true")
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bound", help="recompute certificate columns of a results CSV")
    b.add_argument("csv", type=Path)
    b.add_argument("--m", type=int)
    b.add_argument("--delta", type=float)
    b.add_argument("--optimize-beta", action="store_true")
    b.add_argument("--lever-variant", choices=("conventional", "as-displayed"), default="conventional")
    b.add_argument("--out", type=Path)
    b.set_defaults(func=cmd_bound)

    pl = sub.add_parser("plot", help="render SVG figures from a results CSV")
    pl.add_argument("csv", type=Path)
    pl.add_argument("--out-dir", type=Path)
    pl.set_defaults(func=cmd_plot)

    f = sub.add_parser("mnist-fetch", help="download MNIST IDX files and verify checksums")
    f.add_argument("--dest", type=Path, default=Path("mnist"))
    f.add_argument("--mirror", default=MNIST_MIRROR)
    f.set_defaults(func=cmd_mnist_fetch)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
