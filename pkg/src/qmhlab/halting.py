"""Halting statistics of the delayed-rejection loop for a null transition.

The loop reduces to a scalar process: ``y_n ~ N(0, delta)`` with
``delta = beta^2 sigma^2``; it halts at step 1 if
``exp(y_1) >= u exp(y_0 + delta)`` and at step ``n >= 2`` if
``exp(y_n) >= u exp(y_0 + delta) + (1 - u) max_{1<=m<n} exp(y_m)``.

Analytically the tails are ``t_n = s_n - s_{n-1}`` with

    s_n = sqrt(2 delta) * int exp(sqrt(2 delta) x - delta/2) [1 - Phi(sqrt2 x)^n] dx

where ``Phi(sqrt2 x) = erfc(-x)/2``.  Powers of ``Phi`` are formed from
``log_ndtr`` so that nothing cancels catastrophically at large ``n``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import QuadratureError, ValidationError

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class HaltingParams:
    delta: float
    n_max: int = 20

    def __post_init__(self):
        d = float(self.delta)
        if not np.isfinite(d) or d < 0:
            raise ValidationError("delta must be finite and >= 0")
        if int(self.n_max) < 1:
            raise ValidationError("n_max must be >= 1")
        object.__setattr__(self, "delta", d)
        object.__setattr__(self, "n_max", int(self.n_max))

    @classmethod
    def from_noise(cls, beta: float, sigma: float, n_max: int = 20) -> "HaltingParams":
        return cls((beta * sigma) ** 2, n_max)


@dataclass(frozen=True)
class HaltingTable:
    """Per-step halting law for ``n = 1 .. len(p_halt)``.

    ``tails[k]`` is ``t_{k+1}`` and carries one extra entry, the probability
    of running past the last tabulated step.  ``s_values[k]`` is ``s_k``.
    Empirical tables carry binomial standard errors in ``se``.
    """

    p_halt: np.ndarray
    tails: np.ndarray
    s_values: np.ndarray | None = None
    se: np.ndarray | None = None
    runs: int | None = None

    @property
    def steps(self) -> np.ndarray:
        return np.arange(1, self.p_halt.size + 1)

    def expected_halting(self) -> np.ndarray:
        """Expected capped halting time for every cap ``n`` in the table."""
        return np.cumsum(self.tails[:-1])


# ----------------------------------------------------------------------------
# simulation
# ----------------------------------------------------------------------------

def simulate_halting(params: HaltingParams, runs: int, rng: np.random.Generator,
                     chunk: int = 250_000) -> HaltingTable:
    """Monte Carlo halting steps of the scalar process, capped at ``n_max``.

    The running maximum is kept as a log value.  Runs that have not halted
    after ``n_max`` steps are counted in the final tail entry.
    """
    if runs < 1:
        raise ValidationError("runs must be >= 1")
    n_max = params.n_max
    sd = np.sqrt(params.delta)
    counts = np.zeros(n_max + 1, dtype=np.int64)
    done = 0
    while done < runs:
        size = min(chunk, runs - done)
        done += size
        top = rng.normal(0.0, sd, size) + params.delta          # y_0 + delta
        y_max = np.full(size, -np.inf)
        alive = np.arange(size)
        for n in range(1, n_max + 1):
            y = rng.normal(0.0, sd, alive.size)
            u = rng.random(alive.size)
            with np.errstate(divide="ignore"):
                thresh = np.logaddexp(np.log(u) + top[alive], np.log1p(-u) + y_max[alive])
            halt = y >= thresh
            counts[n - 1] += int(halt.sum())
            keep = ~halt
            alive = alive[keep]
            y_max[alive] = np.maximum(y_max[alive], y[keep])
            if alive.size == 0:
                break
        counts[n_max] += alive.size
    p = counts[:n_max] / runs
    se = np.sqrt(p * (1 - p) / runs)
    tails = counts[::-1].cumsum()[::-1] / runs
    return HaltingTable(p, tails, se=se, runs=runs)


# ----------------------------------------------------------------------------
# quadrature
# ----------------------------------------------------------------------------

def _x_n(n: float) -> float:
    return float(np.sqrt(np.log(n / 2.0)))


def _quad(f, lo, hi, points, tol, what):
    val, err = integrate.quad(f, lo, hi, points=sorted(set(points)), epsabs=tol,
                              epsrel=1e-11, limit=500)
    if err > max(tol, 1e-11 * abs(val)) * 10:
        raise QuadratureError(f"{what} did not converge", err)
    return val


def analytic_s(params: HaltingParams | float, n: int, tol: float | None = None) -> float:
    """``s_n``: the expected halting time with the loop capped at ``n`` steps.

    The left part of the domain, where ``1 - Phi^n`` equals one to double
    precision, is integrated in closed form; the rest uses adaptive
    quadrature.  ``s_0`` and ``s_1`` are returned exactly.
    """
    delta = params.delta if isinstance(params, HaltingParams) else float(params)
    if n < 0:
        raise ValidationError("n must be >= 0")
    if n == 0:
        return 0.0
    if n == 1:
        return 1.0
    if delta <= 0:
        raise ValidationError("analytic_s needs delta > 0")
    if tol is None:
        tol = 1e-10 if n <= 1000 else 1e-8
    c = np.sqrt(2 * delta)
    log_n = np.log(n)
    lo = -np.sqrt(log_n + 40.0)
    hi = max(_x_n(max(n, 3)), c / 2) + np.sqrt(log_n + 40.0) + c

    def f(x):
        bracket = -np.expm1(n * special.log_ndtr(SQRT2 * x))
        return c * np.exp(c * x - delta / 2) * bracket

    left = np.exp(c * lo - delta / 2)
    mid = _quad(f, lo, hi, [0.0, _x_n(max(n, 3)), c / 2], tol, f"s_{n}")
    return float(left + mid)


def r_mn(params: HaltingParams | float, m: int, n: int, tol: float = 1e-12) -> float:
    """``r_{m,n} = sqrt(2 delta) int exp(sqrt(2 delta) x - delta/2) Phi(-sqrt2 x)^m Phi(sqrt2 x)^n dx``."""
    delta = params.delta if isinstance(params, HaltingParams) else float(params)
    if m < 1 or n < 0:
        raise ValidationError("need m >= 1 and n >= 0")
    if delta <= 0:
        raise ValidationError("r_mn needs delta > 0")
    c = np.sqrt(2 * delta)

    def f(x):
        logv = m * special.log_ndtr(-SQRT2 * x) + n * special.log_ndtr(SQRT2 * x)
        return c * np.exp(c * x - delta / 2 + logv)

    span = np.sqrt(np.log(n + 2) + 40.0) + c
    pts = [0.0, c / 2]
    if n >= 3:
        pts.append(_x_n(n))
    return float(_quad(f, -span, span, pts, tol, f"r_{m},{n}"))


def halting_table(params: HaltingParams | float, n_limit: int) -> HaltingTable:
    """Analytic halting law for steps ``1 .. n_limit`` from the ``s_n`` integrals."""
    delta = params.delta if isinstance(params, HaltingParams) else float(params)
    if delta <= 0:
        raise ValidationError("halting_table needs delta > 0")
    s = np.array([analytic_s(delta, k) for k in range(n_limit + 2)])
    tails = np.diff(s)                     # t_1 .. t_{n_limit+1}
    if tails[0] != 1.0:
        raise AssertionError("t_1 must equal one")
    p = tails[:-1] - tails[1:]
    return HaltingTable(p, tails, s_values=s)


# ----------------------------------------------------------------------------
# bounds
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundCheck:
    name: str
    worst_slack: float

    @property
    def ok(self) -> bool:
        return self.worst_slack >= 0


def _slack_min(lower, upper) -> float:
    return float(np.min(np.asarray(upper) - np.asarray(lower)))


def erfc_chain_slack(x_grid=None) -> list[BoundCheck]:
    """Pointwise checks of the erfc bound chain and of ``erfc(x) <= exp(-x^2)``."""
    if x_grid is None:
        x_grid = np.linspace(1e-3, 8.0, 4001)
    x = np.asarray(x_grid, dtype=float)
    erfc = special.erfc(x)
    out = [BoundCheck("erfc(x)<=exp(-x^2)", _slack_min(erfc, np.exp(-x ** 2)))]
    inner_lo = np.exp(-x ** 2) / (np.sqrt(np.pi) * x + 1)
    inner_hi = np.exp(-x ** 2) / (np.sqrt(np.pi) * x)
    out.append(BoundCheck("exp(-x^2)/(sqrt(pi)x+1)<=erfc(x)", _slack_min(inner_lo, erfc)))
    out.append(BoundCheck("erfc(x)<=exp(-x^2)/(sqrt(pi)x)", _slack_min(erfc, inner_hi)))
    # outer bounds with y <= x
    worst_lo = worst_hi = np.inf
    for frac in (0.1, 0.25, 0.5, 0.75, 1.0):
        y = x * frac
        outer_lo = np.exp(1 - x / y - x ** 2) / (np.sqrt(np.pi) * y + 1)
        outer_hi = np.exp(-x ** 2) / (np.sqrt(np.pi) * y)
        worst_lo = min(worst_lo, _slack_min(outer_lo, inner_lo), float(outer_lo.min()))
        worst_hi = min(worst_hi, _slack_min(inner_hi, outer_hi))
    out.append(BoundCheck("0<=outer lower<=inner lower", worst_lo))
    out.append(BoundCheck("inner upper<=outer upper", worst_hi))
    xs = np.linspace(-8, 8, 4001)
    out.append(BoundCheck("0<=erfc<=2", min(float(special.erfc(xs).min()), float((2 - special.erfc(xs)).min()))))
    return out


def erfc_power_slack(n: int, x_grid=None) -> list[BoundCheck]:
    """Pointwise lower/upper bounds on ``(erfc(-x)/2)^n`` with ``x_n = sqrt(log(n/2))``."""
    if n < 3:
        raise ValidationError("the power bounds need n >= 3")
    if x_grid is None:
        x_grid = np.linspace(-6.0, 8.0, 7001)
    x = np.asarray(x_grid, dtype=float)
    xn = _x_n(n)
    power = np.exp(n * special.log_ndtr(SQRT2 * x))
    lower = np.where(x < xn, 0.0, 1 - n / (2 * np.sqrt(np.pi) * xn) * np.exp(-x ** 2))
    upper = np.where(x < xn, np.exp(-(2 * xn / np.sqrt(np.pi)) * (x - xn) ** 2), 1.0)
    return [BoundCheck(f"power lower bound n={n}", _slack_min(lower, power)),
            BoundCheck(f"power upper bound n={n}", _slack_min(power, upper))]


def s_bounds(delta: float, n: int) -> tuple[float, float]:
    """The tight lower and upper bounds bracketing ``s_n``."""
    xn = _x_n(n)
    alpha = (np.pi ** 0.25 / 2) * np.sqrt(delta / xn)
    base = np.exp(np.sqrt(2 * delta) * xn - delta / 2)
    lower = (1 - np.sqrt(np.pi) * alpha * special.erfcx(alpha)) * base
    upper = base + n / (2 * xn) * np.sqrt(delta / 2) * special.erfc(xn - np.sqrt(delta / 2))
    return float(lower), float(upper)


def s_bounds_relaxed(delta: float, n: int) -> tuple[float, float] | None:
    """The relaxed bracket, defined when ``x_n >= sqrt(delta/2)``."""
    xn = _x_n(n)
    if xn < np.sqrt(delta / 2):
        return None
    alpha = (np.pi ** 0.25 / 2) * np.sqrt(delta / xn)
    base = np.exp(np.sqrt(2 * delta) * xn - delta / 2)
    return float((1 - np.sqrt(np.pi) * alpha) * base), float((1 + np.sqrt(delta / 2) / xn) * base)


def asymptotic_s(delta: float, n: float) -> float:
    return float(np.exp(np.sqrt(2 * delta * np.log(n)) - delta / 2))


@dataclass(frozen=True)
class BoundReport:
    checks: list[BoundCheck]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def worst(self) -> BoundCheck:
        return min(self.checks, key=lambda c: c.worst_slack)


def bound_suite(deltas=(0.25, 1.0, 4.0), ns=(4, 16, 256), power_ns=(4, 16, 64)) -> BoundReport:
    """Evaluate every pointwise and integral bound on its test grid."""
    checks = erfc_chain_slack()
    for n in power_ns:
        checks.extend(erfc_power_slack(n))
    for d in deltas:
        for n in ns:
            s = analytic_s(d, n)
            lo, hi = s_bounds(d, n)
            checks.append(BoundCheck(f"s_n lower delta={d} n={n}", s - lo))
            checks.append(BoundCheck(f"s_n upper delta={d} n={n}", hi - s))
            relaxed = s_bounds_relaxed(d, n)
            if relaxed is not None:
                checks.append(BoundCheck(f"relaxed lower delta={d} n={n}", lo - relaxed[0]))
                checks.append(BoundCheck(f"relaxed upper delta={d} n={n}", relaxed[1] - hi))
    return BoundReport(checks)


# ----------------------------------------------------------------------------
# asymptotic cost model
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class CostAccuracy:
    """Approximate (model) outputs of the asymptotic cost relations."""

    n_halt_from_eps: float
    eps_from_nmax: float | None
    n_halt_from_nmax: float | None
    in_regime: bool


def cost_accuracy_model(beta: float, sigma: float, eps: float, n_max: int | None = None,
                        sigma0: float = 0.0) -> CostAccuracy:
    """Asymptotic halting-cost and truncation-error approximations.

    ``sigma0`` enters only through the heuristic substitution
    ``sigma -> sqrt(sigma^2 + sigma0^2)``; it has no independent definition.
    """
    if not 0 < eps < 1:
        raise ValidationError("eps must lie in (0, 1)")
    bs = beta * np.sqrt(sigma ** 2 + sigma0 ** 2)
    n_halt = float(np.exp(bs * np.sqrt(2 * np.log(1 / eps))))
    eps_n = n_halt_n = None
    if n_max is not None:
        if n_max < 3:
            raise ValidationError("n_max must be >= 3 for the asymptotic forms")
        ln = np.log(n_max)
        eps_n = float(bs * np.exp(bs * np.sqrt(2 * ln)) / (np.sqrt(2 * np.pi) * n_max * ln))
        n_halt_n = float(np.exp(bs * np.sqrt(2 * ln) - bs ** 2 / 2))
    return CostAccuracy(n_halt, eps_n, n_halt_n, bool(eps < bs < 1))
