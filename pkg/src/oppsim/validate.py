"""Grid validation of the closed-form model against the Monte-Carlo oracles.

Draws a random parameter grid, evaluates every closed form the model treats
as exact, re-estimates each with the corresponding oracle, and gates the
agreement at three standard errors.  Quantities the model only approximates
(the case probabilities and anything assembled from them) are measured too,
but reported as bias rows instead of gated: their closed forms are knowingly
inexact and a hard gate would only measure the trial count.

The checked-forms table is injectable so a test fixture can corrupt one
formula and confirm the gate actually trips.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import model
from .model import LinkParams, ProviderParams, TransferSizes
from .oracle import (
    batch_queue_waits,
    mc_batch_queue,
    single_service_trials,
    transfer_trials,
)

__all__ = [
    "GateRecord",
    "ValidationReport",
    "run_validation_grid",
    "default_model_functions",
    "EXACT_QUANTITIES",
    "APPROX_QUANTITIES",
]

EXACT_QUANTITIES = (
    "wait",
    "queue_delay",
    "theta_case2B",
    "theta_case2C",
    "b_case3",
    "theta_case3",
    "pmf_n2b_zero",
)

APPROX_QUANTITIES = (
    "p1",
    "p2",
    "p3",
    "p_case2A",
    "theta_single",
    "r_single",
)


def default_model_functions() -> dict:
    """The closed forms under test, keyed by quantity name.

    Exact forms take the grid point's parameter objects; a validation run
    may override any entry (the corrupted-formula self-test relies on it).
    """
    return {
        "wait": lambda link: model.expected_wait(False, link.delta_prime),
        "queue_delay": lambda prov: model.expected_queue_delay(prov),
        "theta_case2B": model.expected_theta_case2B,
        "theta_case2C": model.expected_theta_case2C,
        "b_case3": model.expected_B_case3,
        "theta_case3": model.expected_theta_case3,
        "pmf_n2b_zero": lambda link, sizes: model.pmf_N2B(0, link, sizes),
        "p1": lambda link, prov, sizes: model.prob_cases(link, prov, sizes)[0],
        "p2": lambda link, prov, sizes: model.prob_cases(link, prov, sizes)[1],
        "p3": lambda link, prov, sizes: model.prob_cases(link, prov, sizes)[2],
        "p_case2A": model.prob_case2A,
        "theta_single": model.expected_theta_single,
        "r_single": lambda link, prov, sizes: (
            model.expected_B_total(link, prov, sizes)
            + model.expected_queue_delay(prov)
            + prov.d
            + model.expected_theta_single(link, prov, sizes)
        ),
    }


@dataclass(frozen=True)
class GateRecord:
    """One quantity at one grid point: closed form vs oracle."""

    quantity: str
    point: int
    params: dict
    analytic: float
    estimate: float
    std_error: float
    n_trials: int
    exact: bool

    @property
    def z(self) -> float:
        if self.std_error == 0:
            return 0.0 if self.analytic == self.estimate else math.inf
        return (self.analytic - self.estimate) / self.std_error

    @property
    def passed(self) -> bool:
        return abs(self.z) <= 3.0


@dataclass
class ValidationReport:
    """All gate records plus the per-point probability identity checks."""

    gates: list = field(default_factory=list)
    identity_failures: list = field(default_factory=list)
    n_points: int = 0
    n_trials: int = 0
    seed: int = 0

    @property
    def exact_gates(self):
        return [g for g in self.gates if g.exact]

    @property
    def bias_rows(self):
        return [g for g in self.gates if not g.exact]

    @property
    def failures(self):
        return [g for g in self.exact_gates if not g.passed]

    @property
    def ok(self) -> bool:
        return not self.failures and not self.identity_failures

    def summary_lines(self):
        lines = []
        by_q = {}
        for g in self.exact_gates:
            by_q.setdefault(g.quantity, []).append(g)
        for q in EXACT_QUANTITIES:
            gs = by_q.get(q, [])
            if not gs:
                continue
            worst = max(abs(g.z) for g in gs)
            bad = sum(not g.passed for g in gs)
            lines.append(
                f"{q:<14} {len(gs):>4} points  max|z|={worst:6.2f}  failures={bad}"
            )
        if self.identity_failures:
            lines.append(f"probability identity failures: {len(self.identity_failures)}")
        else:
            lines.append("probability identities: all points within tolerance")
        for g in self.bias_rows:
            rel = (g.analytic - g.estimate) / g.estimate if g.estimate else math.nan
            lines.append(
                f"bias {g.quantity:<13} point {g.point:>3}  model={g.analytic:.6g} "
                f"mc={g.estimate:.6g} (se {g.std_error:.2g})  rel={rel:+.3%}"
            )
        lines.append("RESULT: " + ("PASS" if self.ok else "FAIL"))
        return lines

    def to_dict(self):
        return {
            "n_points": self.n_points,
            "n_trials": self.n_trials,
            "seed": self.seed,
            "ok": self.ok,
            "gates": [
                {
                    "quantity": g.quantity,
                    "point": g.point,
                    "params": g.params,
                    "analytic": g.analytic,
                    "estimate": g.estimate,
                    "std_error": g.std_error,
                    "n_trials": g.n_trials,
                    "exact": g.exact,
                    "z": g.z,
                    "passed": g.passed if g.exact else None,
                }
                for g in self.gates
            ],
            "identity_failures": self.identity_failures,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _log_uniform(rng, lo, hi):
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


_BATCH_LAWS = (
    ("const", 1),
    ("const", 2),
    ("const", 3),
    ("geometric", 0.5),
    ("geometric", 0.8),
    ("twopoint", (1, 4, 0.75)),
)


def _batch_law(rng):
    """Pick a batch-size law; return (l, l2, sampler)."""
    kind, arg = _BATCH_LAWS[int(rng.integers(len(_BATCH_LAWS)))]
    if kind == "const":
        m = arg
        return float(m), float(m * m), (
            lambda r, n, m=m: np.full(n, m, dtype=np.int64)
        )
    if kind == "geometric":
        p = arg
        l = 1.0 / p
        l2 = (2.0 - p) / (p * p)
        return l, l2, (lambda r, n, p=p: r.geometric(p, n).astype(np.int64))
    a, b, pa = arg
    l = pa * a + (1 - pa) * b
    l2 = pa * a * a + (1 - pa) * b * b
    return l, l2, (
        lambda r, n, a=a, b=b, pa=pa: np.where(r.random(n) < pa, a, b).astype(np.int64)
    )


def sample_grid_point(rng):
    """One random parameter point: link, provider, sizes, batch sampler.

    Transfer sizes are controlled through the interruption intensities
    delta*k/V so every connectivity regime the closed forms distinguish is
    exercised; the input-size intensity stays small because the case-3
    backlog form drops O((delta*k/V)^2) terms and the gate must measure
    formula correctness, not that documented truncation.
    """
    delta = _log_uniform(rng, 2e-3, 5e-2)
    delta_prime = _log_uniform(rng, 1e-3, 2e-2)
    V = _log_uniform(rng, 1e4, 1e6)
    c_in = _log_uniform(rng, 2e-4, 2e-3)
    c_out = _log_uniform(rng, 1e-3, 0.3)
    link = LinkParams(delta=delta, delta_prime=delta_prime, V=V)
    sizes = TransferSizes(k=c_in * V / delta, kprime=c_out * V / delta)

    d = _log_uniform(rng, 5.0, 200.0)
    rho = float(rng.uniform(0.05, 0.9))
    ratio = float(rng.choice([1.0, 1.5, 2.0]))
    d2 = ratio * d * d
    l, l2, batch_sampler = _batch_law(rng)
    lam = rho / (l * d)
    prov = ProviderParams.from_stats(lam=lam, l=l, l2=l2, d=d, d2=d2)
    return link, prov, sizes, batch_sampler


def _point_params(link, prov, sizes):
    return {
        "delta": link.delta, "delta_prime": link.delta_prime, "V": link.V,
        "k": sizes.k, "kprime": sizes.kprime,
        "lam": prov.lam, "l": prov.l, "l2": prov.l2,
        "d": prov.d, "d2": prov.d2, "rho": prov.rho,
    }


def run_validation_grid(
    n_points: int = 200,
    n_trials: int = 10**6,
    seed: int = 0,
    include_approx: bool = True,
    approx_points: int = 8,
    approx_trials: int = 200_000,
    model_overrides: dict | None = None,
    progress=None,
) -> ValidationReport:
    """Run the full grid and return the gate report.

    ``model_overrides`` replaces entries of the checked-forms table; the
    corrupted-formula self-test passes a broken callable here and expects
    the report to fail.
    """
    fns = default_model_functions()
    if model_overrides:
        unknown = set(model_overrides) - set(fns)
        if unknown:
            raise ValueError(f"unknown model quantities: {sorted(unknown)}")
        fns.update(model_overrides)

    root = np.random.SeedSequence(seed)
    param_ss, *point_ss = root.spawn(1 + n_points)
    param_rng = np.random.Generator(np.random.SFC64(param_ss))

    report = ValidationReport(n_points=n_points, n_trials=n_trials, seed=seed)
    for i in range(n_points):
        link, prov, sizes, batch_sampler = sample_grid_point(param_rng)
        params = _point_params(link, prov, sizes)
        seeds = point_ss[i].spawn(8)

        def gate(quantity, analytic, estimate, std_error, n, exact=True):
            report.gates.append(GateRecord(
                quantity=quantity, point=i, params=params,
                analytic=float(analytic), estimate=float(estimate),
                std_error=float(std_error), n_trials=int(n), exact=exact,
            ))

        el, _ = transfer_trials(link, 0.0, "intercontact", n_trials, seeds[0])
        gate("wait", fns["wait"](link), el.mean(),
             el.std(ddof=1) / math.sqrt(n_trials), n_trials)

        q = mc_batch_queue(prov, n_trials, seeds[1], batch_sampler=batch_sampler)
        gate("queue_delay", fns["queue_delay"](prov),
             q.estimate, q.std_error, q.n_trials)

        el, n_int = transfer_trials(link, sizes.kprime, "contact", n_trials, seeds[2])
        gate("theta_case2B", fns["theta_case2B"](link, sizes), el.mean(),
             el.std(ddof=1) / math.sqrt(n_trials), n_trials)
        p0_hat = float((n_int == 0).mean())
        gate("pmf_n2b_zero", fns["pmf_n2b_zero"](link, sizes), p0_hat,
             math.sqrt(max(p0_hat * (1 - p0_hat), 1e-12) / n_trials), n_trials)

        el, _ = transfer_trials(link, sizes.kprime, "intercontact", n_trials, seeds[3])
        gate("theta_case2C", fns["theta_case2C"](link, sizes), el.mean(),
             el.std(ddof=1) / math.sqrt(n_trials), n_trials)

        el, _ = transfer_trials(link, sizes.k, "contact", n_trials, seeds[4],
                                require_interruption=True)
        gate("b_case3", fns["b_case3"](link, sizes), el.mean(),
             el.std(ddof=1) / math.sqrt(n_trials), n_trials)

        el, _ = transfer_trials(link, sizes.kprime, "steady", n_trials, seeds[5])
        gate("theta_case3", fns["theta_case3"](link, sizes), el.mean(),
             el.std(ddof=1) / math.sqrt(n_trials), n_trials)

        p1, p2, p3 = model.prob_cases(link, prov, sizes)
        if abs(p1 + p2 + p3 - 1.0) > 1e-12 or not all(
            0.0 <= x <= 1.0 for x in (p1, p2, p3)
        ):
            report.identity_failures.append(
                {"point": i, "kind": "case_probability_simplex", "params": params}
            )
        pmf_sum = sum(model.pmf_N2B(n, link, sizes) for n in range(201))
        if abs(pmf_sum - 1.0) > 1e-9:
            report.identity_failures.append(
                {"point": i, "kind": "pmf_n2b_normalization", "params": params,
                 "sum": pmf_sum}
            )

        if include_approx and i < approx_points:
            trials = single_service_trials(link, prov, sizes, approx_trials, seeds[6])
            case = trials["case"]
            nn = approx_trials
            for name, flag in (("p1", case == 1), ("p2", case == 2), ("p3", case == 3)):
                p_hat = float(flag.mean())
                gate(name, fns[name](link, prov, sizes), p_hat,
                     math.sqrt(max(p_hat * (1 - p_hat), 1e-12) / nn), nn, exact=False)
            in2 = case == 2
            if in2.sum() > 100:
                p2a_hat = float(trials["case2a"][in2].mean())
                gate("p_case2A", fns["p_case2A"](link, prov, sizes), p2a_hat,
                     math.sqrt(max(p2a_hat * (1 - p2a_hat), 1e-12) / int(in2.sum())),
                     int(in2.sum()), exact=False)
            th = trials["theta"]
            gate("theta_single", fns["theta_single"](link, prov, sizes), th.mean(),
                 th.std(ddof=1) / math.sqrt(nn), nn, exact=False)
            r = trials["r"]
            gate("r_single", fns["r_single"](link, prov, sizes), r.mean(),
                 r.std(ddof=1) / math.sqrt(nn), nn, exact=False)

        if progress:
            progress(i + 1, n_points)

    return report
