"""Mixing and cost diagnostics computed from formulas or from completed traces.

Quantities that come from asymptotic cost formulas are tagged ``"model"``
in reports; quantities computed from simulated data are tagged
``"measured"``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest

from .core import retention_rate
from .errors import ValidationError

EPS_MAX_BINS = 8


# ----------------------------------------------------------------------------
# mixing
# ----------------------------------------------------------------------------

def n_mix_bound(omega: float) -> float:
    """Upper bound ``(1 + omega) / (1 - omega)`` on the number of dependent samples per independent one."""
    omega = float(omega)
    if not 0 <= omega < 1:
        raise ValidationError("retention rate must lie in [0, 1)")
    return (1 + omega) / (1 - omega)


def empirical_n_mix(series, max_lag: int | None = None) -> float:
    """Integrated autocorrelation ``1 + 2 sum_k rho_k`` of a scalar chain.

    The sum stops at the first lag whose autocorrelation pair sum turns
    negative, a standard truncation that keeps noise from accumulating.
    """
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    n = x.size
    var = float(x @ x) / n
    if var == 0:
        return float("nan")
    if max_lag is None:
        max_lag = min(n // 10, 1000)
    f = np.fft.rfft(x, 2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:max_lag + 1] / n
    rho = acov / var
    total = 1.0
    for k in range(1, max_lag, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0:
            break
        total += 2 * pair
    return float(total)


# ----------------------------------------------------------------------------
# cost model
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class CostModelInputs:
    omega_tilde: float
    eps_tilde: float
    beta: float
    sigma: float
    sigma0: float = 0.0

    def __post_init__(self):
        if not 0 <= self.omega_tilde < 1:
            raise ValidationError("omega_tilde must lie in [0, 1)")
        _check_eps(self.eps_tilde)
        if self.beta < 0 or self.sigma <= 0 or self.sigma0 < 0:
            raise ValidationError("need beta >= 0, sigma > 0 and sigma0 >= 0")


def _check_eps(eps: float) -> None:
    if not 0 < eps < 1:
        raise ValidationError("eps_tilde must lie strictly between 0 and 1")


def t_mix(inputs: CostModelInputs) -> float:
    """Hamiltonian evolution time per independent sample."""
    log_inv = np.log(1 / inputs.eps_tilde)
    spread = np.sqrt(inputs.sigma ** 2 + inputs.sigma0 ** 2)
    return float(n_mix_bound(inputs.omega_tilde) * np.sqrt(log_inv / 2)
                 * np.exp(inputs.beta * np.sqrt(2 * log_inv) * spread) / inputs.sigma)


def evolution_time_limit(sigma: float, eps_tilde: float) -> float:
    """Evolution cutoff ``sqrt(log(1/eps)/2) / sigma`` of one energy measurement."""
    _check_eps(eps_tilde)
    return float(np.sqrt(np.log(1 / eps_tilde) / 2) / sigma)


def sigma_opt(beta: float, eps_tilde: float) -> tuple[float, float]:
    """Energy resolution minimising ``t_mix`` at ``sigma0 = 0`` and its evolution cutoff."""
    _check_eps(eps_tilde)
    if beta <= 0:
        raise ValidationError("beta must be positive")
    log_inv = np.log(1 / eps_tilde)
    return float(1 / (beta * np.sqrt(2 * log_inv))), float(beta * log_inv)


def t_mix_minimized(beta: float, eps_tilde: float, omega_tilde: float, sigma0: float = 0.0) -> float:
    """Closed form of ``t_mix`` evaluated at :func:`sigma_opt`."""
    _check_eps(eps_tilde)
    log_inv = np.log(1 / eps_tilde)
    return float(beta * log_inv * n_mix_bound(omega_tilde)
                 * np.exp(np.sqrt(1 + 2 * beta ** 2 * sigma0 ** 2 * log_inv)))


# ----------------------------------------------------------------------------
# trace-based estimates
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class CoarseRetention:
    """Retention rate of the observation-level chain.

    For classical chains this underestimates the hidden-state retention
    rate; for quantum chains it is a biased heuristic.
    """

    omega_bar: float
    transition: np.ndarray
    observed: np.ndarray


def coarse_retention_from_trace(trace, obs_size: int, min_length: int = 1000) -> CoarseRetention:
    trace = np.asarray(trace, dtype=np.int64)
    if trace.size < min_length:
        raise ValidationError(f"trace needs at least {min_length} entries")
    if trace.min() < 0 or trace.max() >= obs_size:
        raise ValidationError("trace contains labels outside the observation set")
    counts = np.zeros((obs_size, obs_size))
    np.add.at(counts, (trace[:-1], trace[1:]), 1)
    rows = counts.sum(axis=1)
    observed = rows > 0
    if not observed.all():
        warnings.warn(f"observation classes {np.flatnonzero(~observed).tolist()} never left; excluded",
                      stacklevel=2)
    idx = np.flatnonzero(observed)
    trans = counts[np.ix_(idx, idx)]
    # transitions into excluded classes are impossible once those rows are empty
    trans = trans / trans.sum(axis=1, keepdims=True)
    return CoarseRetention(retention_rate(trans), trans, idx)


def wilson_upper(successes: int, trials: int, confidence: float = 0.95) -> float:
    return float(binomtest(successes, trials).proportion_ci(confidence, method="wilson").high)


@dataclass(frozen=True)
class EpsMaxEstimate:
    """Largest grouped truncation frequency; a proxy for the hidden-state maximum."""

    value: float
    upper: float
    group: object
    groups: int


def epsilon_max_estimate(groups: dict, confidence: float = 0.95) -> EpsMaxEstimate:
    """``groups`` maps a key to ``(truncations, updates)``; empty groups are skipped."""
    best = EpsMaxEstimate(0.0, 0.0, None, 0)
    used = 0
    for key, (trunc, total) in sorted(groups.items(), key=lambda kv: str(kv[0])):
        if total <= 0:
            continue
        used += 1
        rate = trunc / total
        upper = wilson_upper(int(trunc), int(total), confidence)
        if best.group is None or rate > best.value or (rate == best.value and upper > best.upper):
            best = EpsMaxEstimate(rate, upper, key, 0)
    return EpsMaxEstimate(best.value, best.upper, best.group, used)


def group_truncations(records, bins: int = EPS_MAX_BINS) -> dict:
    """Truncation counts keyed by the previous update's last ``(observation, energy bin)``."""
    records = list(records)
    if len(records) < 2:
        return {}
    last_w = np.array([r.trajectory.omega[-1] for r in records[:-1]])
    edges = np.linspace(last_w.min(), last_w.max(), bins + 1)[1:-1]
    groups: dict = {}
    for prev, rec, w in zip(records[:-1], records[1:], last_w):
        key = (int(prev.trajectory.obs[-1]), int(np.searchsorted(edges, w, side="right")))
        t, n = groups.get(key, (0, 0))
        groups[key] = (t + int(rec.truncated), n + 1)
    return groups


@dataclass(frozen=True)
class EstimatedBounds:
    eps_tilde: float
    omega_bar: float
    eps_max: float
    eps_max_upper: float
    bound: float
    flags: tuple[str, ...]


def error_bounds_from_records(records, obs_size: int, bins: int = EPS_MAX_BINS) -> EstimatedBounds:
    """Observable distance bound ``eps / max{0, 1 - omega - eps_max}`` from a simulated chain.

    The retention rate comes from the first-observation trace and
    ``eps_max`` from grouped truncation frequencies; both are biased proxies.
    """
    records = list(records)
    if not records:
        raise ValidationError("no update records")
    eps = float(np.mean([r.truncated for r in records]))
    trace = [int(r.trajectory.obs[1]) for r in records]
    omega_bar = coarse_retention_from_trace(trace, obs_size).omega_bar
    em = epsilon_max_estimate(group_truncations(records, bins))
    den = max(0.0, 1.0 - omega_bar - em.value)
    flags = ["biased-coarse-grained-estimates"]
    if den == 0:
        flags.append("bound-vacuous")
    bound = eps / den if den > 0 else float("inf")
    return EstimatedBounds(eps, omega_bar, em.value, em.upper, bound, tuple(flags))


def diagnostics_report(records, obs_size: int, beta: float, sigma: float,
                       sigma0: float = 0.0, bins: int = EPS_MAX_BINS) -> dict:
    """JSON-ready summary of measured chain statistics and cost-model outputs."""
    est = error_bounds_from_records(records, obs_size, bins)
    flags = list(est.flags)
    report = {
        "omega_bar": {"value": est.omega_bar, "kind": "measured"},
        "eps_tilde": {"value": est.eps_tilde, "kind": "measured"},
        "eps_max": {"value": est.eps_max, "upper": est.eps_max_upper, "kind": "measured",
                    "grouping": f"last observation x {bins} energy bins"},
        "distance_bound": {"value": est.bound, "kind": "measured"},
    }
    if est.omega_bar < 1:
        report["n_mix_bound"] = {"value": n_mix_bound(est.omega_bar), "kind": "measured"}
    else:
        flags.append("no-mixing-bound")
        report["n_mix_bound"] = {"value": None, "kind": "measured"}
    if 0 < est.eps_tilde < 1 and est.omega_bar < 1 and sigma > 0 and beta > 0:
        inputs = CostModelInputs(est.omega_bar, est.eps_tilde, beta, sigma, sigma0)
        s_opt, t_max = sigma_opt(beta, est.eps_tilde)
        report["t_mix"] = {"value": t_mix(inputs), "kind": "model"}
        report["sigma_opt"] = {"value": s_opt, "t_max": t_max, "kind": "model"}
    else:
        flags.append("cost-model-undefined")
        report["t_mix"] = {"value": None, "kind": "model"}
        report["sigma_opt"] = {"value": None, "kind": "model"}
    report["flags"] = flags
    return report
