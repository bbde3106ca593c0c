"""Bound reports: assembly of certificates from run outputs and CSV I/O."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from ..bounds import BoundParams, dp_pacbayes_rhs, kl_inverse, lever_bound, optimize_beta

CSV_COLUMNS = (
    "seed", "dataset", "label_mode", "procedure", "tau1", "tau2", "gamma", "epoch",
    "train_err01", "test_err01", "train_xent", "kl_upper_raw", "kl_upper", "epsilon",
    "rhs_dp", "rhs_lever", "risk_bound_dp", "risk_bound_lever", "runtime_s",
)
_STR_COLUMNS = {"dataset", "label_mode", "procedure"}
_INT_COLUMNS = {"seed", "epoch"}
NAN = float("nan")


@dataclass(frozen=True)
class BoundReport:
    seed: int
    dataset: str
    label_mode: str
    procedure: str
    tau1: float
    tau2: float
    gamma: float
    epoch: int
    train_err01: float
    test_err01: float
    train_xent: float
    kl_upper_raw: float
    kl_upper: float
    epsilon: float
    rhs_dp: float
    rhs_lever: float
    risk_bound_dp: float
    risk_bound_lever: float
    runtime_s: float

    @property
    def completed(self) -> bool:
        return not math.isnan(self.train_err01)

    @property
    def tau(self) -> float:
        """The temperature the posterior was sampled at (tau2 for two-stage runs)."""
        return self.tau2 if self.procedure == "two-stage" else self.tau1


@dataclass(frozen=True)
class RunOutputs:
    """Measured quantities of one run (or one checkpoint of it)."""

    seed: int
    dataset: str
    label_mode: str
    procedure: str
    tau1: float
    tau2: float
    m: int
    epoch: int
    train_err01: float
    test_err01: float
    train_xent: float
    gamma: float = NAN
    kl_upper_raw: float = NAN
    epsilon: float = NAN
    runtime_s: float = 0.0


def assemble_report(raw: RunOutputs, params: BoundParams, *, optimize: bool = False,
                    lever_variant: str = "conventional") -> BoundReport:
    """Turn measured risks and KL/privacy terms into risk certificates.

    The Lever certificate uses the temperature of the sampled posterior; the
    DP certificate is filled only when a KL estimate and epsilon are present.
    """
    if raw.m != params.m:
        raise ValueError(f"run has m={raw.m} but bound parameters have m={params.m}")
    q = min(max(raw.train_err01, 0.0), 1.0)
    tau = raw.tau2 if raw.procedure == "two-stage" else raw.tau1
    rhs_lever = lever_bound(tau, params.m, params.delta, lever_variant)
    kl_upper = rhs_dp = risk_dp = NAN
    if not (math.isnan(raw.kl_upper_raw) or math.isnan(raw.epsilon)):
        kl_upper = max(0.0, raw.kl_upper_raw)
        if optimize:
            _, rhs_dp = optimize_beta(kl_upper, params.m, params.delta, raw.epsilon)
        else:
            rhs_dp = dp_pacbayes_rhs(kl_upper, BoundParams(params.m, params.delta, params.beta, raw.epsilon))
        risk_dp = kl_inverse(q, rhs_dp)
    return BoundReport(
        seed=raw.seed, dataset=raw.dataset, label_mode=raw.label_mode, procedure=raw.procedure,
        tau1=raw.tau1, tau2=raw.tau2, gamma=raw.gamma, epoch=raw.epoch,
        train_err01=raw.train_err01, test_err01=raw.test_err01, train_xent=raw.train_xent,
        kl_upper_raw=raw.kl_upper_raw, kl_upper=kl_upper, epsilon=raw.epsilon,
        rhs_dp=rhs_dp, rhs_lever=rhs_lever, risk_bound_dp=risk_dp,
        risk_bound_lever=kl_inverse(q, rhs_lever), runtime_s=raw.runtime_s,
    )


def failed_report(raw: RunOutputs) -> BoundReport:
    """Placeholder row for a run that diverged: identifiers kept, numbers NaN."""
    values = {f.name: NAN for f in fields(BoundReport)}
    values.update(seed=raw.seed, dataset=raw.dataset, label_mode=raw.label_mode,
                  procedure=raw.procedure, tau1=raw.tau1, tau2=raw.tau2, gamma=raw.gamma,
                  epoch=raw.epoch, runtime_s=raw.runtime_s)
    return BoundReport(**values)


def _fmt(name, value) -> str:
    if name in _STR_COLUMNS:
        return str(value)
    if name in _INT_COLUMNS:
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(reports, path, sidecar: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in reports:
            d = asdict(r)
            w.writerow([_fmt(c, d[c]) for c in CSV_COLUMNS])
    if sidecar is not None:
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def read_csv(path) -> list[BoundReport]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        out = []
        for row in reader:
            vals = {}
            for c in CSV_COLUMNS:
                if c in _STR_COLUMNS:
                    vals[c] = row[c]
                elif c in _INT_COLUMNS:
                    vals[c] = int(row[c])
                else:
                    vals[c] = float(row[c])
            out.append(BoundReport(**vals))
    return out


def read_sidecar(path) -> dict:
    side = Path(path).with_suffix(".json")
    return json.loads(side.read_text()) if side.exists() else {}


def recompute(report: BoundReport, m: int, delta: float, *, optimize: bool = False,
              lever_variant: str = "conventional") -> BoundReport:
    """Re-derive the certificate columns of an existing row for new (m, delta)."""
    if not report.completed:
        return report
    raw = RunOutputs(
        seed=report.seed, dataset=report.dataset, label_mode=report.label_mode,
        procedure=report.procedure, tau1=report.tau1, tau2=report.tau2, m=m, epoch=report.epoch,
        train_err01=report.train_err01, test_err01=report.test_err01, train_xent=report.train_xent,
        gamma=report.gamma, kl_upper_raw=report.kl_upper_raw, epsilon=report.epsilon,
        runtime_s=report.runtime_s,
    )
    return assemble_report(raw, BoundParams(m, delta), optimize=optimize, lever_variant=lever_variant)
