"""Sweeps over temperature grids: train, estimate risks and KL, assemble reports."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..data import MnistPaths, SynthConfig, mnist_load, randomize_labels, synth_generate
from ..gibbs import GaussianPrior, GibbsConfig, logz_upper_mc, network_risk_fn, posterior_risk_mc
from ..sgld import SgldDivergenceError, one_stage_train, two_stage_train
from .config import ExperimentConfig, cell_seed
from .report import BoundReport, RunOutputs, assemble_report, failed_report

log = logging.getLogger(__name__)


def load_data(cfg: ExperimentConfig, seed: int, label_mode: str):
    """(train, heldout) for one seed; random labels are redrawn on both splits."""
    if cfg.dataset == "synth":
        train, heldout, _ = synth_generate(
            SynthConfig(cfg.n_train, cfg.n_heldout, cfg.d, seed, cfg.hyperplane))
    else:
        paths = MnistPaths.from_dir(cfg.mnist_dir, gz=(Path(cfg.mnist_dir) / "train-labels-idx1-ubyte.gz").exists())
        train, heldout = mnist_load(paths, cfg.limit or None)
    if label_mode == "random":
        train = randomize_labels(train, seed=cell_seed(seed, "labels", "train"))
        heldout = randomize_labels(heldout, seed=cell_seed(seed, "labels", "heldout"))
    return train, heldout


def _window_outputs(cfg, arch, samples, train, heldout, **ids):
    tr = posterior_risk_mc(samples, arch, train, cfg.loss_cfg)
    te = posterior_risk_mc(samples, arch, heldout, cfg.loss_cfg)
    return RunOutputs(dataset=cfg.dataset, m=len(train), train_err01=tr.err01,
                      test_err01=te.err01, train_xent=tr.xent, **ids)


def run_one_stage_cell(cfg: ExperimentConfig, label_mode: str, tau: float, seed: int,
                       iterate_dir=None) -> tuple[list[BoundReport], str | None]:
    """Train at fixed tau; one row per checkpoint epoch plus the final epoch."""
    arch = cfg.arch
    train, heldout = load_data(cfg, seed, label_mode)
    params = cfg.bound_params(len(train))
    ids = dict(seed=seed, label_mode=label_mode, procedure="one-stage", tau1=float(tau), tau2=float(tau))
    rows: list[RunOutputs] = []
    start = time.perf_counter()

    def on_epoch(t, w, sink):
        if cfg.checkpoint_every and t % cfg.checkpoint_every == 0 and t < cfg.epochs:
            rows.append(_window_outputs(cfg, arch, sink.samples(), train, heldout, epoch=t,
                                        runtime_s=time.perf_counter() - start, **ids))

    sgld_cfg = cfg.sgld(cell_seed(seed, "one-stage", cfg.dataset, label_mode, float(tau)))
    try:
        res = one_stage_train(arch, train, tau, sgld_cfg, loss_cfg=cfg.loss_cfg, window=cfg.window,
                              on_epoch=on_epoch if cfg.checkpoint_every else None)
    except SgldDivergenceError as exc:
        log.warning("one-stage run diverged (seed=%s, tau=%g): %s", seed, tau, exc)
        fail = RunOutputs(dataset=cfg.dataset, m=len(train), epoch=cfg.epochs, train_err01=math.nan,
                          test_err01=math.nan, train_xent=math.nan,
                          runtime_s=time.perf_counter() - start, **ids)
        done = [assemble_report(r, params, lever_variant=cfg.lever_variant) for r in rows]
        return done + [failed_report(fail)], str(exc)
    if iterate_dir is not None:
        res.sink.dump(Path(iterate_dir) / f"one-stage_{label_mode}_tau{tau:g}_seed{seed}")
    rows.append(_window_outputs(cfg, arch, res.sink.samples(), train, heldout, epoch=cfg.epochs,
                                runtime_s=time.perf_counter() - start, **ids))
    return [assemble_report(r, params, lever_variant=cfg.lever_variant) for r in rows], None


def run_two_stage_cell(cfg: ExperimentConfig, label_mode: str, tau2: float, seed: int,
                       iterate_dir=None) -> tuple[list[BoundReport], str | None]:
    """Private prior from stage one, anchored posterior at tau2, Monte Carlo KL."""
    arch = cfg.arch
    train, heldout = load_data(cfg, seed, label_mode)
    params = cfg.bound_params(len(train))
    total_epochs = cfg.T1 + cfg.epochs
    ids = dict(seed=seed, label_mode=label_mode, procedure="two-stage", tau1=float(cfg.tau1),
               tau2=float(tau2), gamma=float(cfg.gamma), epoch=total_epochs)
    key = ("two-stage", cfg.dataset, label_mode, float(cfg.tau1), float(tau2), float(cfg.gamma))
    start = time.perf_counter()
    try:
        res = two_stage_train(arch, train, cfg.tau1, tau2, cfg.gamma, cfg.sgld(cell_seed(seed, *key)),
                              cfg.T1, loss_cfg=cfg.loss_cfg, window=cfg.window)
    except SgldDivergenceError as exc:
        log.warning("two-stage run diverged (seed=%s, tau2=%g): %s", seed, tau2, exc)
        fail = RunOutputs(dataset=cfg.dataset, m=len(train), train_err01=math.nan, test_err01=math.nan,
                          train_xent=math.nan, runtime_s=time.perf_counter() - start, **ids)
        return [failed_report(fail)], str(exc)
    if iterate_dir is not None:
        res.sink.dump(Path(iterate_dir) / f"two-stage_{label_mode}_tau{tau2:g}_seed{seed}")

    prior = GaussianPrior(res.w0, cfg.gamma)
    gibbs = GibbsConfig(tau2, cfg.loss_cfg.surrogate_range, prior)
    rng = np.random.default_rng(cell_seed(seed, "logz", *key))
    est = logz_upper_mc(gibbs, network_risk_fn(arch, train, cfg.loss_cfg), cfg.n_logz, rng)
    out = _window_outputs(cfg, arch, res.sink.samples(), train, heldout, kl_upper_raw=est.kl_raw,
                          epsilon=res.privacy.epsilon, runtime_s=time.perf_counter() - start, **ids)
    report = assemble_report(out, params, optimize=cfg.optimize_beta, lever_variant=cfg.lever_variant)
    return [report], None


def _cells(cfg: ExperimentConfig):
    grid = cfg.taus if cfg.procedure == "one-stage" else cfg.tau2s
    return [(mode, float(t), int(s)) for mode in cfg.label_modes for t in sorted(grid) for s in cfg.seeds]


def _run_cell(args):
    cfg, mode, tau, seed, iterate_dir = args
    fn = run_one_stage_cell if cfg.procedure == "one-stage" else run_two_stage_cell
    return fn(cfg, mode, tau, seed, iterate_dir)


def run_sweep(cfg: ExperimentConfig, iterate_dir=None, progress=None):
    """Run every (label mode, tau, seed) cell of the configured procedure.

    Returns (reports, failures); reports are ordered by (label mode, tau, seed,
    epoch) regardless of ``cfg.jobs``.
    """
    cells = _cells(cfg)
    args = [(cfg, mode, tau, seed, iterate_dir) for mode, tau, seed in cells]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_cell, args))
    else:
        results = []
        for i, a in enumerate(args):
            results.append(_run_cell(a))
            if progress is not None:
                progress(i + 1, len(args), a[1:4])
    reports, failures = [], []
    for (mode, tau, seed), (rows, err) in zip(cells, results):
        reports.extend(rows)
        if err is not None:
            failures.append({"label_mode": mode, "tau": tau, "seed": seed, "error": err})
    return reports, failures


def run_one_stage_sweep(cfg: ExperimentConfig, **kw) -> list[BoundReport]:
    return run_sweep(cfg.replace(procedure="one-stage"), **kw)[0]


def run_two_stage_sweep(cfg: ExperimentConfig, **kw) -> list[BoundReport]:
    return run_sweep(cfg.replace(procedure="two-stage"), **kw)[0]
