"""Independent Monte-Carlo oracles for the closed-form model.

Every quantity the analytic model computes in closed form is re-estimated
here by directly sampling the underlying stochastic processes: alternating
exponential on-off connectivity for transfers, and a batch-arrival FIFO
queue for provider delays.  Nothing in this module evaluates, or shares
arithmetic with, the closed forms themselves (only the parameter dataclasses
are reused as the common vocabulary); a bug in the model cannot propagate
here, which is what makes the agreement checks meaningful.

All estimators are seed-deterministic and vectorized.
"""

import math
from dataclasses import dataclass

import numpy as np

from .model import LinkParams, ProviderParams, TransferSizes

__all__ = [
    "OracleResult",
    "mc_transfer_time",
    "mc_single_service",
    "mc_batch_queue",
    "transfer_trials",
    "batch_queue_waits",
    "single_service_trials",
    "matched_batch_sampler",
    "matched_service_sampler",
]

_MIN_TRIALS = 10**4


@dataclass(frozen=True)
class OracleResult:
    """A Monte-Carlo estimate with its standard error and trial count."""

    estimate: float
    std_error: float
    n_trials: int

    def __post_init__(self):
        if self.n_trials < _MIN_TRIALS:
            raise ValueError(f"need at least {_MIN_TRIALS} trials")
        if self.std_error < 0:
            raise ValueError("std_error must be non-negative")

    def agrees_with(self, value: float, n_sigma: float = 3.0) -> bool:
        return abs(value - self.estimate) <= n_sigma * self.std_error


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.SFC64(seed))


def _result(samples: np.ndarray) -> OracleResult:
    n = samples.size
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return OracleResult(estimate=float(samples.mean()), std_error=se, n_trials=n)


# ---------------------------------------------------------------------------
# On-off channel transfers.
# ---------------------------------------------------------------------------

def transfer_trials(
    link: LinkParams,
    k_bytes: float,
    start_phase: str,
    n_trials: int,
    seed,
    require_interruption: bool = False,
):
    """Sample the elapsed time to push k_bytes over an alternating on-off link.

    The channel alternates exponential connected periods (rate ``link.delta``)
    and disconnected gaps (rate ``link.delta_prime``); data flows at ``link.V``
    only while connected and resumes after each gap.  ``start_phase`` places
    the start of the transfer inside a connected period ("contact"), inside a
    gap ("intercontact"), or in the stationary phase mix ("steady"); residual
    phase durations are exponential either way.  With ``require_interruption``
    the first connected period is drawn conditioned on ending before the
    transfer completes, so every trial has at least one interruption.

    Returns ``(elapsed, n_interruptions)`` arrays of length ``n_trials``.
    """
    if k_bytes < 0:
        raise ValueError("k_bytes must be non-negative")
    if start_phase not in ("contact", "intercontact", "steady"):
        raise ValueError(f"unknown start_phase: {start_phase!r}")
    rng = _rng(seed)
    tau = k_bytes / link.V
    mean_on = 1.0 / link.delta
    mean_off = 1.0 / link.delta_prime

    elapsed = np.zeros(n_trials)
    if start_phase == "intercontact":
        if require_interruption:
            raise ValueError("require_interruption needs a contact start")
        elapsed += rng.exponential(mean_off, n_trials)
    elif start_phase == "steady":
        if require_interruption:
            raise ValueError("require_interruption needs a contact start")
        frac_contact = link.delta_prime / (link.delta + link.delta_prime)
        in_gap = rng.random(n_trials) >= frac_contact
        elapsed[in_gap] += rng.exponential(mean_off, int(in_gap.sum()))

    remaining = np.full(n_trials, tau)
    n_int = np.zeros(n_trials, dtype=np.int64)
    alive = np.arange(n_trials)

    if require_interruption:
        if tau <= 0:
            raise ValueError("cannot condition on interrupting an empty transfer")
        # first connected period truncated to end before the transfer does
        u = rng.random(n_trials)
        first_on = -mean_on * np.log1p(u * np.expm1(-link.delta * tau))
        remaining -= first_on
        elapsed += rng.exponential(mean_off, n_trials)
        n_int += 1

    while alive.size:
        on = rng.exponential(mean_on, alive.size)
        survives = on < remaining[alive]
        cut = alive[survives]
        remaining[cut] -= on[survives]
        elapsed[cut] += rng.exponential(mean_off, cut.size)
        n_int[cut] += 1
        alive = cut

    elapsed += tau
    return elapsed, n_int


def mc_transfer_time(
    link: LinkParams,
    k_bytes: float,
    start_phase: str,
    n_trials: int,
    seed,
    require_interruption: bool = False,
) -> OracleResult:
    """Mean elapsed time of the on-off transfer process (see transfer_trials)."""
    elapsed, _ = transfer_trials(
        link, k_bytes, start_phase, n_trials, seed,
        require_interruption=require_interruption,
    )
    return _result(elapsed)


# ---------------------------------------------------------------------------
# Batch-arrival FIFO queue.
# ---------------------------------------------------------------------------

def matched_service_sampler(d: float, d2: float):
    """Gamma service law with the given first two moments (Dirac if d2 == d^2)."""
    var = d2 - d * d
    if var < 0:
        raise ValueError("d2 must be at least d squared")
    if var <= 1e-12 * d * d:
        return lambda rng, n: np.full(n, d)
    shape = d * d / var
    scale = var / d
    return lambda rng, n: rng.gamma(shape, scale, n)


def matched_batch_sampler(l: float, l2: float):
    """Integer batch law with the given moments: a constant or a two-point mix.

    Raises ValueError when no two-point law on positive integers matches;
    callers with richer laws pass their own sampler.
    """
    if l < 1:
        raise ValueError("mean batch size below 1 cannot be realized with integers")
    if abs(l2 - l * l) <= 1e-9 * max(1.0, l * l):
        size = round(l)
        if abs(size - l) > 1e-9:
            raise ValueError("deterministic batch size must be an integer")
        return lambda rng, n: np.full(n, size, dtype=np.int64)
    for a in range(int(math.floor(l)), 0, -1):
        if a == l:
            continue
        b = (l * a - l2) / (a - l)
        b_int = round(b)
        if b_int <= l or abs(b - b_int) > 1e-6:
            continue
        p_a = (b_int - l) / (b_int - a)
        if not (0.0 < p_a < 1.0):
            continue
        def sampler(rng, n, a=a, b=b_int, p_a=p_a):
            return np.where(rng.random(n) < p_a, a, b).astype(np.int64)
        return sampler
    raise ValueError("no two-point integer batch law matches (l, l2); pass batch_sampler")


def batch_queue_waits(
    prov: ProviderParams,
    n_served: int,
    seed,
    batch_sampler=None,
    service_sampler=None,
    warmup: int | None = None,
    customer_level: bool = True,
):
    """Simulate the batch-arrival FIFO queue and return stationary waits.

    Batches arrive as a Poisson process of rate ``prov.lam``; each batch brings
    an iid number of requests which are served one at a time in arrival order.
    Returns the post-warmup waiting times (time from arrival to service start)
    of ``n_served`` consecutive customers, or of whole batches (time to the
    batch's first service) when ``customer_level`` is false.
    """
    rng = _rng(seed)
    batch_sampler = batch_sampler or matched_batch_sampler(prov.l, prov.l2)
    service_sampler = service_sampler or matched_service_sampler(prov.d, prov.d2)
    if warmup is None:
        warmup = max(10**4, n_served // 10)
    if customer_level:
        target = n_served + warmup
        sizes = batch_sampler(rng, int(target / max(prov.l, 1.0) * 1.05) + 64)
        total = int(sizes.sum())
        while total < target:
            extra = batch_sampler(rng, int((target - total) / max(prov.l, 1.0)) + 64)
            sizes = np.concatenate([sizes, extra])
            total = int(sizes.sum())
    else:
        # n_served counts batches here: the pool is of backlog-at-arrival waits
        sizes = batch_sampler(rng, n_served + warmup)
        total = int(sizes.sum())

    n_batches = sizes.size
    services = service_sampler(rng, total)
    ends = np.cumsum(sizes)
    starts = ends - sizes
    cs = np.concatenate([[0.0], np.cumsum(services)])
    batch_work = cs[ends] - cs[starts]

    if prov.lam > 0:
        gaps = rng.exponential(1.0 / prov.lam, n_batches - 1)
        drift = batch_work[:-1] - gaps
        prefix = np.concatenate([[0.0], np.cumsum(drift)])
        batch_wait = prefix - np.minimum.accumulate(prefix)
    else:
        batch_wait = np.zeros(n_batches)

    if not customer_level:
        return batch_wait[warmup:][:n_served]

    intra = cs[:-1][: total] - np.repeat(cs[starts], sizes)
    waits = np.repeat(batch_wait, sizes) + intra
    return waits[warmup:target]


def mc_batch_queue(
    prov: ProviderParams,
    n_served: int,
    seed,
    batch_sampler=None,
    service_sampler=None,
) -> OracleResult:
    """Mean stationary FIFO wait of a served request at the provider.

    The standard error comes from contiguous block means because consecutive
    waits are strongly correlated; the iid formula would understate it.
    """
    waits = batch_queue_waits(
        prov, n_served, seed,
        batch_sampler=batch_sampler, service_sampler=service_sampler,
    )
    n = waits.size
    n_blocks = 100
    block = n // n_blocks
    means = waits[: block * n_blocks].reshape(n_blocks, block).mean(axis=1)
    se = float(means.std(ddof=1) / math.sqrt(n_blocks))
    return OracleResult(estimate=float(waits.mean()), std_error=se, n_trials=n)


# ---------------------------------------------------------------------------
# Full single-service interaction.
# ---------------------------------------------------------------------------

def _advance_phase(rng, delta, delta_prime, hold: np.ndarray):
    """Track the on-off channel through a hold of given durations.

    Starts connected with a memoryless residual.  Returns (on_after, same_period,
    residual_on) where same_period flags holds that fit inside the starting
    connected period, and residual_on is the remaining connected time for trials
    that end connected (fresh exponential residuals are equivalent, but keeping
    the sampled one preserves the joint law with same_period).
    """
    n = hold.size
    mean_on = 1.0 / delta
    mean_off = 1.0 / delta_prime
    left = hold.copy()
    on_after = np.zeros(n, dtype=bool)
    same = np.zeros(n, dtype=bool)
    residual = np.zeros(n)

    alive = np.arange(n)
    first = True
    while alive.size:
        on = rng.exponential(mean_on, alive.size)
        fits = on >= left[alive]
        done = alive[fits]
        on_after[done] = True
        if first:
            same[done] = True
        residual[done] = on[fits] - left[done]
        cont = alive[~fits]
        left[cont] -= on[~fits]
        off = rng.exponential(mean_off, cont.size)
        ends_off = off >= left[cont]
        off_done = cont[ends_off]
        # hold expires inside the gap: disconnected at the end of it
        on_after[off_done] = False
        still = cont[~ends_off]
        left[still] -= off[~ends_off]
        alive = still
        first = False
    return on_after, same, residual


def single_service_trials(
    link: LinkParams,
    prov: ProviderParams,
    sizes: TransferSizes,
    n_trials: int,
    seed,
    pool_size: int = 200_000,
):
    """Sample the full interaction: upload, queue, execute, return.

    The probe request starts its upload inside a contact.  Queue delays are
    drawn from a stationary batch-wait pool of an independently simulated
    provider queue (the probe arrives alone at a Poisson epoch, so it waits
    for the backlog, not for batch mates).  Execution times follow the moment
    matched gamma law.  The channel keeps alternating while the provider
    works, and the output goes back over whatever phase the channel is in.

    Returns a dict of arrays: r (provisioning time without the initial wait
    phase), b, dq, ds, theta, case (1, 2 or 3), case2a flag.
    """
    rng = _rng(seed)
    b, n_in = transfer_trials(link, sizes.k, "contact", n_trials, rng)

    if prov.lam > 0:
        pool = batch_queue_waits(prov, pool_size, rng, customer_level=False)
        dq = pool[rng.integers(0, pool.size, n_trials)]
    else:
        dq = np.zeros(n_trials)
    ds = matched_service_sampler(prov.d, prov.d2)(rng, n_trials)

    on_after, same, residual = _advance_phase(rng, link.delta, link.delta_prime, dq + ds)

    theta = np.zeros(n_trials)
    n_out = np.zeros(n_trials, dtype=np.int64)
    tau_out = sizes.kprime / link.V
    # connected at output time: consume the tracked residual first
    idx_on = np.flatnonzero(on_after)
    if idx_on.size:
        el, ni = _finish_transfer_from_residual(
            rng, link, tau_out, residual[idx_on]
        )
        theta[idx_on] = el
        n_out[idx_on] = ni
    idx_off = np.flatnonzero(~on_after)
    if idx_off.size:
        el, ni = transfer_trials(link, sizes.kprime, "intercontact", idx_off.size, rng)
        theta[idx_off] = el
        n_out[idx_off] = ni

    case3 = n_in >= 1
    case1 = (~case3) & same & (n_out == 0) & on_after
    case2 = ~(case1 | case3)
    case2a = (~case3) & same & on_after
    case = np.where(case3, 3, np.where(case2, 2, 1))
    r = b + dq + ds + theta
    return {
        "r": r, "b": b, "dq": dq, "ds": ds, "theta": theta,
        "case": case, "case2a": case2a,
    }


def _finish_transfer_from_residual(rng, link: LinkParams, tau: float, residual: np.ndarray):
    """On-off transfer whose first connected period has a known residual."""
    n = residual.size
    elapsed = np.zeros(n)
    n_int = np.zeros(n, dtype=np.int64)
    remaining = np.full(n, tau)
    fits = residual >= remaining
    cont = np.flatnonzero(~fits)
    remaining[cont] -= residual[cont]
    if cont.size:
        elapsed[cont] += rng.exponential(1.0 / link.delta_prime, cont.size)
        n_int[cont] += 1
    alive = cont
    while alive.size:
        on = rng.exponential(1.0 / link.delta, alive.size)
        survives = on < remaining[alive]
        cut = alive[survives]
        remaining[cut] -= on[survives]
        elapsed[cut] += rng.exponential(1.0 / link.delta_prime, cut.size)
        n_int[cut] += 1
        alive = cut
    return elapsed + tau, n_int


def mc_single_service(
    link: LinkParams,
    prov: ProviderParams,
    sizes: TransferSizes,
    n_trials: int,
    seed,
):
    """Mean provisioning time of the probed interaction plus empirical case
    frequencies (p1, p2, p3)."""
    trials = single_service_trials(link, prov, sizes, n_trials, seed)
    case = trials["case"]
    probs = tuple(float((case == c).mean()) for c in (1, 2, 3))
    return _result(trials["r"]), probs
