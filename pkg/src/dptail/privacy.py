"""Privacy accounting: budgets, composition, CDP/DP conversion, noise calibration.

Everything here is a pure closed-form computation over immutable budget
values.  The only mutable object is :class:`CdpLedger`, which must be
confined to one thread or synchronized externally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable


class OutOfRegimeError(ValueError):
    """Parameters left the regime in which the guarantee is proven."""


class AccountingOverflowError(ValueError):
    """A composed budget stopped being meaningful, or a ledger was overspent."""


@dataclass(frozen=True)
class ApproxDpBudget:
    """An (epsilon, delta) approximate differential privacy budget."""

    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class CdpBudget:
    """A rho budget under zero-concentrated differential privacy."""

    rho: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")


@dataclass(frozen=True)
class SensitivityBound:
    """L2 sensitivity of a vector-valued statistic under one-sample replacement."""

    delta2: float

    def __post_init__(self):
        if self.delta2 < 0:
            raise ValueError(f"sensitivity must be nonnegative, got {self.delta2}")


@dataclass(frozen=True)
class NoiseScale:
    """Per-coordinate variance of the Gaussian noise added by a mechanism."""

    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")


def gaussian_noise_scale(sens: SensitivityBound, budget: CdpBudget) -> NoiseScale:
    """Variance making additive per-coordinate Gaussian noise rho-CDP.

    For a statistic with L2 sensitivity ``delta2``, adding i.i.d. Gaussian
    noise of variance ``delta2**2 / (2 * rho)`` to every coordinate yields a
    ``rho``-CDP mechanism.
    """
    if not sens.delta2 > 0:
        raise ValueError("sensitivity must be positive to calibrate noise")
    return NoiseScale(sens.delta2 ** 2 / (2.0 * budget.rho))


def clipped_mean_sensitivity(radius: float, n: int) -> SensitivityBound:
    """Replacement sensitivity 2R/n of the mean of n vectors clipped to norm R."""
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    return SensitivityBound(2.0 * radius / n)


def cdp_compose(budgets: Iterable[CdpBudget]) -> CdpBudget:
    """Composition of CDP mechanisms: rho parameters add."""
    rhos = [b.rho for b in budgets]
    if not rhos:
        raise ValueError("cannot compose an empty list of budgets")
    return CdpBudget(math.fsum(rhos))


def dp_to_cdp(eps: float) -> CdpBudget:
    """A pure eps-DP mechanism is (eps^2 / 2)-CDP."""
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {eps}")
    return CdpBudget(eps * eps / 2.0)


def cdp_to_dp(budget: CdpBudget, delta: float) -> ApproxDpBudget:
    """A rho-CDP mechanism is (rho + 2*sqrt(rho*ln(1/delta)), delta)-DP."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    rho = budget.rho
    eps = rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta))
    return ApproxDpBudget(eps, delta)


def advanced_composition(step: ApproxDpBudget, k: int, delta_prime: float) -> ApproxDpBudget:
    """Advanced composition of k adaptive (eps, delta)-DP mechanisms.

    Returns ``(sqrt(2k ln(1/delta')) * eps + k * eps * (e^eps - 1),
    k*delta + delta')``.  Raises :class:`AccountingOverflowError` when the
    composed delta reaches 1, at which point the budget is vacuous.
    """
    if k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    if not 0 < delta_prime < 1:
        raise ValueError(f"delta' must lie in (0, 1), got {delta_prime}")
    delta_total = k * step.delta + delta_prime
    if delta_total >= 1.0:
        raise AccountingOverflowError(
            f"composed delta {delta_total} >= 1; the budget is no longer meaningful"
        )
    eps = step.epsilon
    eps_total = math.sqrt(2.0 * k * math.log(1.0 / delta_prime)) * eps + k * eps * math.expm1(eps)
    return ApproxDpBudget(eps_total, delta_total)


def optimization_cdp_budget(total_eps: float, delta: float, *, unchecked: bool = False) -> CdpBudget:
    """Whole-run CDP budget rho = eps^2 / (1 + 2*sqrt(ln(1/delta)))^2.

    Running a mechanism under this rho and converting back at ``delta``
    yields an (eps, delta)-DP guarantee, provided ``eps <= 1``.  Pass
    ``unchecked=True`` to evaluate the formula outside the proven regime.
    """
    if not total_eps > 0:
        raise ValueError(f"epsilon must be positive, got {total_eps}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if total_eps > 1.0 and not unchecked:
        raise OutOfRegimeError(
            f"eps={total_eps} > 1 is outside the proven regime; pass unchecked=True to override"
        )
    denom = 1.0 + 2.0 * math.sqrt(math.log(1.0 / delta))
    return CdpBudget(total_eps * total_eps / (denom * denom))


def per_step_cdp_budget(
    total_eps: float, delta: float, steps: int, *, unchecked: bool = False
) -> CdpBudget:
    """Per-step CDP budget rho/T for a T-step optimization under (eps, delta)-DP.

    Composing ``steps`` mechanisms at this budget and converting at ``delta``
    is dominated by the (eps, delta) target.
    """
    if steps < 1:
        raise ValueError(f"steps must be a positive integer, got {steps}")
    whole = optimization_cdp_budget(total_eps, delta, unchecked=unchecked)
    return CdpBudget(whole.rho / steps)


def shuffle_regime_epsilon_cap(k: int, delta: float) -> float:
    """Largest total epsilon the shuffle amplification bound is proven for."""
    return 8.0 * math.e ** 2 * math.sqrt(math.log(4.0 / delta) / k)


def shuffle_amplified_group_budget(total: ApproxDpBudget, k: int) -> CdpBudget:
    """Per-group CDP budget so a permutation-invariant map of k groups is (eps, delta)-DP.

    The amplification-by-shuffling closed form:

        rho = (1 / (64 e^4)) * eps^2 * k / (ln(8/delta) * (1 + 2*sqrt(ln(12k/delta)))^2)

    valid for ``eps <= 8 e^2 sqrt(ln(4/delta) / k)``.  Any function of the k
    group statistics, each released under this rho, that is invariant to
    permuting the groups satisfies (eps, delta)-DP overall.
    """
    if k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    cap = shuffle_regime_epsilon_cap(k, total.delta)
    if total.epsilon > cap:
        raise OutOfRegimeError(
            f"eps={total.epsilon} exceeds the amplification regime bound "
            f"8e^2*sqrt(ln(4/delta)/k)={cap:.6g} for k={k}, delta={total.delta}"
        )
    eps, delta = total.epsilon, total.delta
    denom = 1.0 + 2.0 * math.sqrt(math.log(12.0 * k / delta))
    rho = (eps * eps * k) / (64.0 * math.e ** 4 * math.log(8.0 / delta) * denom * denom)
    return CdpBudget(rho)


def per_step_dp_budget(total: ApproxDpBudget, steps: int) -> ApproxDpBudget:
    """Per-step (eps0, delta0) so advanced composition over T steps stays within total.

    eps0 = eps / (2*sqrt(2T ln(2/delta))), delta0 = delta / (2T).
    """
    if steps < 1:
        raise ValueError(f"steps must be a positive integer, got {steps}")
    eps0 = total.epsilon / (2.0 * math.sqrt(2.0 * steps * math.log(2.0 / total.delta)))
    delta0 = total.delta / (2.0 * steps)
    return ApproxDpBudget(eps0, delta0)


class CdpLedger:
    """Tracks cumulative CDP spend against a declared total.

    Budgets themselves are immutable; the ledger is the one mutable object in
    this module and rejects charges that would exceed the total.  Not
    thread-safe: confine to one thread or synchronize externally.
    """

    # tiny slack so T charges of rho/T never trip on float rounding
    _REL_SLACK = 1e-9

    def __init__(self, total: CdpBudget):
        self.total = total
        self._spent = 0.0

    @property
    def spent(self) -> float:
        return self._spent

    @property
    def remaining(self) -> float:
        return max(0.0, self.total.rho - self._spent)

    def charge(self, budget: CdpBudget) -> None:
        new_spent = self._spent + budget.rho
        if new_spent > self.total.rho * (1.0 + self._REL_SLACK):
            raise AccountingOverflowError(
                f"charging rho={budget.rho} would spend {new_spent} "
                f"of a total budget {self.total.rho}"
            )
        self._spent = new_spent
