"""Closed-form expected-time model for intermittently connected service provisioning.

A seeker node asks a provider node (or a chain of providers) to run a service
over a device-to-device link that alternates between connected and disconnected
periods, both exponentially distributed: rate ``delta`` ends a contact, rate
``delta_prime`` ends a disconnection.  A request goes through five phases:
waiting for the first contact, uploading the input, queueing at the provider,
executing, and returning the output.  This module evaluates the expected
duration of each phase, the probabilities of the three interruption regimes of
the transfer process, and the assembled end-to-end expectations for single
services and composed chains.

Every function here is a pure function of its arguments.  The same arithmetic
kernels accept numpy arrays, which is what the composition-graph builder uses
to weigh hundreds of edges in one shot; the public operations are the scalar
wrappers around them.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

__all__ = [
    "LinkParams",
    "ProviderParams",
    "TransferSizes",
    "PhaseEstimate",
    "UnstableQueueError",
    "expected_wait",
    "expected_queue_delay",
    "prob_cases",
    "prob_case2A",
    "steady_state_split",
    "expected_theta_case2A",
    "expected_theta_case2B",
    "expected_theta_case2C",
    "expected_B_case3",
    "expected_theta_case3",
    "expected_B_total",
    "expected_theta_single",
    "expected_theta_composition",
    "pmf_N2A",
    "pmf_N2B",
    "pmf_RNIC",
    "estimate_single",
    "estimate_composition",
]


class UnstableQueueError(ValueError):
    """Raised when a queue formula is evaluated at load rho >= 1."""


@dataclass(frozen=True)
class LinkParams:
    """Pairwise link triple: contact end rate, reconnection rate, throughput.

    Mean contact duration is 1/delta seconds, mean disconnection is
    1/delta_prime seconds, and V is the achievable transfer rate in
    bytes/second while connected.
    """

    delta: float
    delta_prime: float
    V: float

    def __post_init__(self):
        if not (self.delta > 0 and self.delta_prime > 0 and self.V > 0):
            raise ValueError("link parameters must be strictly positive")


@dataclass(frozen=True)
class ProviderParams:
    """Provider-side queue and execution statistics.

    mu is the mean service rate (1/mean execution time), rho the offered load
    lam*l*d, lam the batch arrival rate, (l, l2) the first two moments of the
    batch size, and (d, d2) the first two moments of the execution time.
    """

    mu: float
    rho: float
    lam: float
    l: float
    l2: float
    d: float
    d2: float

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if self.mu <= 0 or self.d <= 0:
            raise ValueError("mu and d must be positive")
        if self.lam < 0 or self.l < 0 or self.l2 < 0:
            raise ValueError("lam, l, l2 must be non-negative")
        if self.l2 < self.l**2 - 1e-9 * max(1.0, self.l**2):
            raise ValueError("l2 must be at least l squared")
        if self.d2 < self.d**2 - 1e-9 * self.d**2:
            raise ValueError("d2 must be at least d squared")

    @classmethod
    def from_stats(cls, lam, l, l2, d, d2):
        """Build params from observed moments, deriving mu and rho."""
        return cls(mu=1.0 / d, rho=lam * l * d, lam=lam, l=l, l2=l2, d=d, d2=d2)


@dataclass(frozen=True)
class TransferSizes:
    """Input and output transfer sizes in bytes, backlog included."""

    k: float
    kprime: float

    def __post_init__(self):
        if self.k < 0 or self.kprime < 0:
            raise ValueError("transfer sizes must be non-negative")


@dataclass(frozen=True)
class PhaseEstimate:
    """Per-phase expected seconds plus regime probabilities for one service."""

    e_w: float
    e_b: float
    e_dq: float
    e_ds: float
    e_theta: float
    p1: float
    p2: float
    p3: float
    total: float

    def __post_init__(self):
        if math.isfinite(self.total):
            expected = self.e_w + self.e_b + self.e_dq + self.e_ds + self.e_theta
            if self.total != expected:
                raise ValueError("total must equal the sum of the phases")
        if abs((self.p1 + self.p2 + self.p3) - 1.0) > 1e-12:
            raise ValueError("regime probabilities must sum to 1")
        for p in (self.p1, self.p2, self.p3):
            if not (0.0 <= p <= 1.0):
                raise ValueError("regime probabilities must lie in [0, 1]")


# ---------------------------------------------------------------------------
# Array kernels.  Shared by the scalar operations below and by the
# composition-graph builder; every kernel accepts scalars or numpy arrays.
# ---------------------------------------------------------------------------

def queue_delay_kernel(lam, l, l2, d, d2, rho):
    """Mean FIFO wait in a batch-arrival single-server queue; inf at rho >= 1.

    Stationary workload seen by an arriving batch plus the services of the
    same-batch predecessors of a randomly placed member.
    """
    lam, l, l2, d, d2, rho = np.broadcast_arrays(
        *(np.asarray(x, dtype=np.float64) for x in (lam, l, l2, d, d2, rho))
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        slack = 1.0 - rho
        out = lam * l * d2 / (2.0 * slack) + (l2 - l) * d / (2.0 * l * slack)
    return np.where(rho < 1.0, out, np.inf)


def exit_rate_factor_kernel(delta, mu, rho):
    """Weight mu*(1-rho)/(delta + mu*(1-rho)) of the memoryless sojourn bound.

    Clamped to 0 for rho >= 1, its continuous limit, so overloaded providers
    degrade gracefully instead of producing negative probabilities.
    """
    num = np.maximum(mu * (1.0 - np.asarray(rho, dtype=np.float64)), 0.0)
    return num / (delta + num)


def p1_kernel(delta, mu, rho, k, kprime, V):
    return exit_rate_factor_kernel(delta, mu, rho) * np.exp(-delta * (k + kprime) / V)


def p3_kernel(delta, k, V):
    return -np.expm1(-delta * np.asarray(k, dtype=np.float64) / V)


def case_probs_kernel(delta, mu, rho, k, kprime, V):
    """(p1, p2, p3, clamped flag); p2 clamped at 0 with proportional renorm."""
    p1 = p1_kernel(delta, mu, rho, k, kprime, V)
    p3 = p3_kernel(delta, k, V)
    p2 = 1.0 - p1 - p3
    clamped = p2 < 0.0
    if np.any(clamped):
        scale = np.where(clamped, 1.0 / (p1 + p3), 1.0)
        p1 = np.where(clamped, p1 * scale, p1)
        p3 = np.where(clamped, p3 * scale, p3)
        p2 = np.where(clamped, 0.0, p2)
    return p1, p2, p3, clamped


def p2a_kernel(delta, mu, rho, k, V):
    return exit_rate_factor_kernel(delta, mu, rho) * np.exp(-delta * np.asarray(k) / V)


def theta_case2A_kernel(delta, delta_prime, V, mu, rho, k, kprime):
    c = delta * np.asarray(kprime, dtype=np.float64) / V
    # exp(-delta*(k+kprime)/V) * (exp(c)*(c-1)+1) folded together so large c
    # cannot overflow and small c keeps full precision
    series = c + np.expm1(-c)
    correction = (
        (1.0 / delta_prime)
        * np.exp(-delta * np.asarray(k, dtype=np.float64) / V)
        * series
        * exit_rate_factor_kernel(delta, mu, rho)
    )
    return kprime / V + 1.0 / delta_prime + correction


def theta_case2B_kernel(delta, delta_prime, V, kprime):
    return (np.asarray(kprime, dtype=np.float64) / V) * (1.0 + delta / delta_prime)


def theta_case2C_kernel(delta, delta_prime, V, kprime):
    return 1.0 / delta_prime + theta_case2B_kernel(delta, delta_prime, V, kprime)


def b_case3_kernel(delta, delta_prime, V, k):
    k = np.asarray(k, dtype=np.float64)
    return (k / V) * (1.0 + delta / delta_prime) + np.exp(-delta * k / V) / delta_prime


def theta_case3_kernel(delta, delta_prime, V, kprime):
    tail = delta / (delta_prime * (delta_prime + delta))
    return theta_case2B_kernel(delta, delta_prime, V, kprime) + tail


def b_total_kernel(delta, delta_prime, V, mu, rho, k, kprime):
    p1, p2, p3, _ = case_probs_kernel(delta, mu, rho, k, kprime, V)
    return (np.asarray(k, dtype=np.float64) / V) * (p1 + p2) + b_case3_kernel(
        delta, delta_prime, V, k
    ) * p3


def theta_single_kernel(delta, delta_prime, V, mu, rho, k, kprime):
    """Case mixture of the output-return time for one full service interaction."""
    p1, p2, p3, _ = case_probs_kernel(delta, mu, rho, k, kprime, V)
    p2a = p2a_kernel(delta, mu, rho, k, V)
    frac_contact = delta_prime / (delta + delta_prime)
    frac_inter = delta / (delta + delta_prime)
    th2a = theta_case2A_kernel(delta, delta_prime, V, mu, rho, k, kprime)
    th2b = theta_case2B_kernel(delta, delta_prime, V, kprime)
    th2c = theta_case2C_kernel(delta, delta_prime, V, kprime)
    th3 = theta_case3_kernel(delta, delta_prime, V, kprime)
    theta_case2 = p2a * th2a + (1.0 - p2a) * (frac_contact * th2b + frac_inter * th2c)
    return p1 * (np.asarray(kprime, dtype=np.float64) / V) + p2 * theta_case2 + p3 * th3


def _log_pmf(log_coeff, n_plus, c):
    """exp(log_coeff + n_plus*log(c) - lgamma(n_plus + 1)) with c == 0 handled."""
    c = np.asarray(c, dtype=np.float64)
    n_plus = np.asarray(n_plus, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = log_coeff + n_plus * np.log(c) - gammaln(n_plus + 1.0)
        out = np.exp(logs)
    return np.where(c > 0.0, out, np.where(n_plus == 0.0, np.exp(log_coeff), 0.0))


# ---------------------------------------------------------------------------
# Scalar operations.
# ---------------------------------------------------------------------------

def _require_positive_rate(value, name):
    if not value > 0:
        raise ValueError(f"{name} must be a positive rate")


def _require_stable(prov: ProviderParams):
    if prov.rho >= 1.0:
        raise UnstableQueueError(f"provider load rho={prov.rho} is not below 1")


def expected_wait(in_contact: bool, delta_prime: float) -> float:
    """Expected seconds until the pair is connected: 0 now, else one mean gap."""
    _require_positive_rate(delta_prime, "delta_prime")
    return 0.0 if in_contact else 1.0 / delta_prime


def expected_queue_delay(p: ProviderParams) -> float:
    """Expected FIFO queueing delay at the provider before execution starts."""
    _require_stable(p)
    if p.l <= 0:
        raise ValueError("mean batch size l must be positive")
    return float(queue_delay_kernel(p.lam, p.l, p.l2, p.d, p.d2, p.rho))


def prob_cases(link: LinkParams, prov: ProviderParams, sizes: TransferSizes):
    """Probabilities of the three transfer regimes: untouched, output-side
    interruption, input-side interruption.  Clamped to the simplex."""
    p1, p2, p3, _ = case_probs_kernel(
        link.delta, prov.mu, prov.rho, sizes.k, sizes.kprime, link.V
    )
    return float(p1), float(p2), float(p3)


def prob_case2A(link: LinkParams, prov: ProviderParams, sizes: TransferSizes) -> float:
    """Probability that the first contact outlives the input upload and the
    provider's queueing plus execution, so the output starts inside it."""
    return float(p2a_kernel(link.delta, prov.mu, prov.rho, sizes.k, link.V))


def steady_state_split(delta: float, delta_prime: float):
    """Long-run fractions of time the pair spends (connected, disconnected)."""
    _require_positive_rate(delta, "delta")
    _require_positive_rate(delta_prime, "delta_prime")
    frac_contact = delta_prime / (delta + delta_prime)
    return frac_contact, delta / (delta + delta_prime)


def expected_theta_case2A(link: LinkParams, prov: ProviderParams, sizes: TransferSizes) -> float:
    """Expected output-return seconds when the output starts inside the
    original contact (printed closed form, approximate)."""
    return float(
        theta_case2A_kernel(
            link.delta, link.delta_prime, link.V, prov.mu, prov.rho, sizes.k, sizes.kprime
        )
    )


def expected_theta_case2B(link: LinkParams, sizes: TransferSizes) -> float:
    """Expected output-return seconds when the output starts inside a later
    contact: pure transfer inflated by expected disconnection gaps."""
    return float(theta_case2B_kernel(link.delta, link.delta_prime, link.V, sizes.kprime))


def expected_theta_case2C(link: LinkParams, sizes: TransferSizes) -> float:
    """Expected output-return seconds when the pair is disconnected at output
    time: one mean gap plus the interrupted transfer."""
    return float(theta_case2C_kernel(link.delta, link.delta_prime, link.V, sizes.kprime))


def expected_B_case3(link: LinkParams, sizes: TransferSizes) -> float:
    """Expected input-upload seconds given the first contact breaks before the
    upload finishes (printed closed form)."""
    return float(b_case3_kernel(link.delta, link.delta_prime, link.V, sizes.k))


def expected_theta_case3(link: LinkParams, sizes: TransferSizes) -> float:
    """Expected output-return seconds after an interrupted upload: transfer
    started from the stationary connectivity phase."""
    return float(theta_case3_kernel(link.delta, link.delta_prime, link.V, sizes.kprime))


def expected_B_total(link: LinkParams, prov: ProviderParams, sizes: TransferSizes) -> float:
    """Expected input-upload seconds over all three regimes."""
    return float(
        b_total_kernel(
            link.delta, link.delta_prime, link.V, prov.mu, prov.rho, sizes.k, sizes.kprime
        )
    )


def expected_theta_single(link: LinkParams, prov: ProviderParams, sizes: TransferSizes) -> float:
    """Expected output-return seconds over all regimes and sub-regimes."""
    return float(
        theta_single_kernel(
            link.delta, link.delta_prime, link.V, prov.mu, prov.rho, sizes.k, sizes.kprime
        )
    )


def expected_theta_composition(link: LinkParams, sizes: TransferSizes, tq: float) -> float:
    """Expected handoff seconds between chained providers: queued-data delay
    plus the interrupted transfer of the output."""
    if tq < 0:
        raise ValueError("tq must be non-negative")
    return tq + float(theta_case2B_kernel(link.delta, link.delta_prime, link.V, sizes.kprime))


def _check_count(n):
    if not isinstance(n, (int, np.integer)):
        raise ValueError("n must be an integer")
    if n < 0:
        raise ValueError("n must be non-negative")


def pmf_N2A(n: int, link: LinkParams, prov: ProviderParams, sizes: TransferSizes) -> float:
    """Printed joint weight of n extra interruptions in the output-inside-
    original-contact regime; sums to less than 1 over n by construction."""
    _check_count(n)
    c = link.delta * sizes.kprime / link.V
    coeff = -link.delta * (sizes.k + sizes.kprime) / link.V
    base = _log_pmf(coeff, n + 1, c)
    return float(base * exit_rate_factor_kernel(link.delta, prov.mu, prov.rho))


def pmf_N2B(n: int, link: LinkParams, sizes: TransferSizes) -> float:
    """Distribution of the number of interruptions while sending the output
    starting inside a contact: Poisson with mean delta*kprime/V."""
    _check_count(n)
    c = link.delta * sizes.kprime / link.V
    return float(_log_pmf(-c, n, c))


def pmf_RNIC(n: int, link: LinkParams, sizes: TransferSizes) -> float:
    """Printed joint weight of n extra interruptions of the input upload; the
    sum over n equals the probability that the upload is interrupted at all."""
    _check_count(n)
    c = link.delta * sizes.k / link.V
    return float(_log_pmf(-c, n + 1, c))


def estimate_single(
    link: LinkParams, prov: ProviderParams, sizes: TransferSizes, in_contact: bool
) -> PhaseEstimate:
    """Assembled five-phase estimate for one service at one provider.

    An overloaded provider (rho >= 1) yields an infinite total with the
    continuous rho -> 1 limits of the probabilities, so rankings can still
    order it behind every stable alternative.
    """
    e_w = expected_wait(in_contact, link.delta_prime)
    e_ds = prov.d
    if prov.rho >= 1.0:
        p1, p2, p3, _ = case_probs_kernel(
            link.delta, prov.mu, prov.rho, sizes.k, sizes.kprime, link.V
        )
        return PhaseEstimate(
            e_w=e_w,
            e_b=float(
                b_total_kernel(
                    link.delta, link.delta_prime, link.V, prov.mu, prov.rho,
                    sizes.k, sizes.kprime,
                )
            ),
            e_dq=math.inf,
            e_ds=e_ds,
            e_theta=float(
                theta_single_kernel(
                    link.delta, link.delta_prime, link.V, prov.mu, prov.rho,
                    sizes.k, sizes.kprime,
                )
            ),
            p1=float(p1),
            p2=float(p2),
            p3=float(p3),
            total=math.inf,
        )
    e_b = expected_B_total(link, prov, sizes)
    e_dq = expected_queue_delay(prov)
    e_theta = expected_theta_single(link, prov, sizes)
    p1, p2, p3 = prob_cases(link, prov, sizes)
    total = e_w + e_b + e_dq + e_ds + e_theta
    return PhaseEstimate(
        e_w=e_w, e_b=e_b, e_dq=e_dq, e_ds=e_ds, e_theta=e_theta,
        p1=p1, p2=p2, p3=p3, total=total,
    )


def estimate_composition(legs, in_contact: bool = False) -> float:
    """Expected provisioning seconds for a chain of service legs.

    ``legs`` is a non-empty sequence of (link, prov, sizes, tq) tuples, one per
    leg, where each link is the inbound hop toward that leg's provider and tq
    the transfer-queue time of that hop.  The first leg supplies the waiting
    and upload phases; every leg contributes queueing and execution; interior
    handoffs use the queued-transfer form and the final return to the seeker
    uses the full case mixture, evaluated on the last leg's link as a proxy.
    A single leg reproduces the single-service estimate exactly.
    """
    legs = list(legs)
    if not legs:
        raise ValueError("legs must be non-empty")
    first_link, first_prov, first_sizes, _ = legs[0]
    if len(legs) == 1:
        return estimate_single(first_link, first_prov, first_sizes, in_contact).total
    if any(prov.rho >= 1.0 for _, prov, _, _ in legs):
        return math.inf
    total = expected_wait(in_contact, first_link.delta_prime)
    total = total + expected_B_total(first_link, first_prov, first_sizes)
    total = total + expected_queue_delay(first_prov)
    total = total + first_prov.d
    for link, prov, sizes, tq in legs[1:]:
        # the handoff into this leg rides the leg's inbound link
        total = total + expected_theta_composition(link, sizes, tq)
        total = total + expected_queue_delay(prov)
        total = total + prov.d
    last_link, last_prov, last_sizes, _ = legs[-1]
    total = total + expected_theta_single(last_link, last_prov, last_sizes)
    return total
