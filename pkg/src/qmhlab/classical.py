"""Classical Metropolis-Hastings: kernels, balance checks and rate identities."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    SUM_TOL,
    as_beta,
    as_distribution,
    as_energies,
    as_kernel,
    check_dense,
    retention_rate,
    thermal_distribution,
    tv_distance,
)
from .errors import ImpossibleEventError, ValidationError


@dataclass(frozen=True)
class MhModel:
    """Energies, inverse temperature and driving kernel ``driver[a, b] = P(b|a)``."""

    energy: np.ndarray
    beta: float
    driver: np.ndarray
    labels: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        energy = as_energies(self.energy)
        driver = as_kernel(self.driver)
        if driver.shape[0] != energy.size:
            raise ValidationError(
                f"driver is {driver.shape[0]}x{driver.shape[0]} but there are {energy.size} states")
        if self.labels is not None and len(self.labels) != energy.size:
            raise ValidationError("one label per state is required")
        object.__setattr__(self, "energy", energy)
        object.__setattr__(self, "driver", driver)
        object.__setattr__(self, "beta", as_beta(self.beta))

    @property
    def size(self) -> int:
        return self.energy.size

    def thermal(self) -> np.ndarray:
        return thermal_distribution(self.energy, self.beta)


def _log_weights(model: MhModel) -> np.ndarray:
    return -model.beta * model.energy


def _acceptance_from_log_weights(log_w: np.ndarray, driver: np.ndarray) -> np.ndarray:
    """``A[a, b] = min{1, w(b) P(a|b) / (w(a) P(b|a))}``; NaN where ``P(b|a) = 0``.

    Zero weights (log weight ``-inf``) are allowed: moves out of a
    zero-weight state are always accepted, moves into one never are.
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        dlog = log_w[None, :] - log_w[:, None]
        ratio = np.exp(dlog) * driver.T / driver
        acc = np.minimum(1.0, ratio)
    acc[np.isneginf(log_w), :] = 1.0
    np.fill_diagonal(acc, 1.0)
    acc[driver == 0] = np.nan
    return acc


def acceptance_matrix(model: MhModel) -> np.ndarray:
    """All acceptance probabilities at once, NaN where a proposal cannot occur."""
    return _acceptance_from_log_weights(_log_weights(model), model.driver)


def mh_acceptance(model: MhModel, a: int, b: int) -> float:
    """``min{1, exp(beta E(a) - beta E(b)) P(a|b) / P(b|a)}``."""
    pba = model.driver[a, b]
    if pba == 0:
        raise ImpossibleEventError(f"acceptance undefined: P({b}|{a}) = 0")
    ratio = np.exp(model.beta * (model.energy[a] - model.energy[b])) * model.driver[b, a] / pba
    return float(min(1.0, ratio))


def kernel_from_acceptance(acc: np.ndarray, driver: np.ndarray) -> np.ndarray:
    """Accepted mass ``A P`` off the diagonal plus all rejected mass on it."""
    moved = np.where(driver > 0, np.nan_to_num(acc) * driver, 0.0)
    kernel = moved.copy()
    kernel[np.diag_indices_from(kernel)] += driver.sum(axis=1) - moved.sum(axis=1)
    return kernel


def metropolis_kernel(weights, driver) -> np.ndarray:
    """Metropolis-Hastings kernel for an unnormalised target ``weights`` (zeros allowed)."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValidationError("weights must be non-negative")
    driver = as_kernel(driver)
    with np.errstate(divide="ignore"):
        log_w = np.log(w)
    return kernel_from_acceptance(_acceptance_from_log_weights(log_w, driver), driver)


def build_pm_kernel(model: MhModel) -> np.ndarray:
    """Exact one-step kernel of the classical update."""
    check_dense(model.size)
    return kernel_from_acceptance(acceptance_matrix(model), model.driver)


def mh_step_detail(model: MhModel, a: int, rng: np.random.Generator) -> tuple[int, int, bool]:
    """One update; returns ``(new_state, proposal, accepted)``."""
    cdf = np.cumsum(model.driver[a])
    b = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), model.size - 1)
    u = rng.random()
    with np.errstate(over="ignore"):
        ratio = np.exp(model.beta * (model.energy[a] - model.energy[b])) * model.driver[b, a] / model.driver[a, b]
    if u <= ratio:
        return b, b, True
    return a, b, False


def mh_step(model: MhModel, a: int, rng: np.random.Generator) -> int:
    return mh_step_detail(model, a, rng)[0]


def run_mh_chain(model: MhModel, a0: int, steps: int, rng: np.random.Generator):
    """Run ``steps`` updates; returns arrays ``(states, proposals, accepted)``."""
    states = np.empty(steps, dtype=np.int64)
    proposals = np.empty(steps, dtype=np.int64)
    accepted = np.empty(steps, dtype=bool)
    a = int(a0)
    for t in range(steps):
        a, b, ok = mh_step_detail(model, a, rng)
        states[t], proposals[t], accepted[t] = a, b, ok
    return states, proposals, accepted


@dataclass(frozen=True)
class BalanceReport:
    max_violation: float
    stationarity_l1: float


def check_detailed_balance(kernel, p) -> BalanceReport:
    """Largest ``|K(b|a)p(a) - K(a|b)p(b)|`` and ``|K^T p - p|_1``."""
    k = np.asarray(kernel, dtype=float)
    p = np.asarray(p, dtype=float)
    if k.shape != (p.size, p.size):
        raise ValidationError(f"kernel shape {k.shape} does not match {p.size} states")
    flux = k * p[:, None]
    return BalanceReport(
        max_violation=float(np.abs(flux - flux.T).max()),
        stationarity_l1=float(np.abs(p @ k - p).sum()),
    )


@dataclass(frozen=True)
class RejectionReport:
    rejection_rate: float
    reversibility_tv: float
    try_distance: float

    @property
    def identity_gap(self) -> float:
        return abs(self.rejection_rate - self.reversibility_tv)

    @property
    def try_slack(self) -> float:
        return self.rejection_rate - self.try_distance


def rejection_rate(model: MhModel, tol: float = SUM_TOL) -> RejectionReport:
    """Average rejection rate, cross-checked against its reversibility form.

    Raises
    ------
    ValidationError
        If the two forms disagree by more than ``tol``.
    """
    check_dense(model.size)
    p = model.thermal()
    drv = model.driver
    acc = np.nan_to_num(acceptance_matrix(model))
    lam = 1.0 - float((acc * drv * p[:, None]).sum())
    flux = drv * p[:, None]
    lam_tv = 0.5 * float(np.abs(flux - flux.T).sum())
    if abs(lam - lam_tv) > tol:
        raise ValidationError(f"rejection-rate forms disagree: {lam!r} vs {lam_tv!r}")
    return RejectionReport(lam, lam_tv, tv_distance(p @ drv, p))


def acceptance_split(model: MhModel) -> tuple[np.ndarray, np.ndarray]:
    """Per-state rejection probability and the post-acceptance kernel.

    A state whose every proposal is rejected gets an identity row in the
    post-acceptance kernel (it never leaves).
    """
    drv = model.driver
    acc = np.nan_to_num(acceptance_matrix(model))
    moved = acc * drv
    lam = 1.0 - moved.sum(axis=1)
    lam = np.clip(lam, 0.0, 1.0)
    pa = np.eye(model.size)
    live = lam < 1.0
    pa[live] = moved[live] / (1.0 - lam[live])[:, None]
    return lam, pa


def repeat_until_accept_kernel(model: MhModel, n: int) -> np.ndarray:
    """Kernel of repeating the update until acceptance, at most ``n`` times."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    lam, pa = acceptance_split(model)
    geometric = np.array([np.sum(lam_a ** np.arange(n)) for lam_a in lam])
    kernel = pa * ((1.0 - lam) * geometric)[:, None]
    kernel[np.diag_indices_from(kernel)] += lam ** n
    return kernel


@dataclass(frozen=True)
class ApproxRelationReport:
    """Compares ``Omega_M`` with ``Omega_A ** (1 - Lambda)``; diagnostic only."""

    omega_m: float
    omega_a: float
    rejection_rate: float

    @property
    def predicted(self) -> float:
        return self.omega_a ** (1.0 - self.rejection_rate)


def approx_relation_report(model: MhModel) -> ApproxRelationReport:
    _, pa = acceptance_split(model)
    return ApproxRelationReport(
        omega_m=retention_rate(build_pm_kernel(model)),
        omega_a=retention_rate(pa),
        rejection_rate=rejection_rate(model).rejection_rate,
    )


@dataclass(frozen=True)
class ExampleFamily:
    """Two-parameter driver on ``S + {inf}`` and its Metropolis-Hastings kernel.

    The extra state is the last index and has zero target weight.
    """

    driver: np.ndarray
    kernel: np.ndarray
    target: np.ndarray
    predicted_retention: float


def example_family_kernel(p, lam: float, omega: float) -> ExampleFamily:
    p = as_distribution(p)
    if not (0.0 <= lam <= 1.0 and 0.0 <= omega <= 1.0):
        raise ValidationError("lambda' and omega' must lie in [0, 1]")
    target = np.append(p, 0.0)
    p_ext = np.append((1.0 - lam) * p, lam)
    size = target.size
    driver = (1.0 - omega) * np.tile(p_ext, (size, 1)) + omega * np.eye(size)
    kernel = metropolis_kernel(target, driver)
    return ExampleFamily(driver, kernel, target, 1.0 - (1.0 - omega) * (1.0 - lam))


def embed_state_space(model: MhModel, n: int, driver: str = "uniform") -> tuple[MhModel, np.ndarray]:
    """Expand each state into ``floor(n exp(max beta E - beta E(a)))`` copies.

    Copies of ``a`` get energy ``E(a) + log(copies) / beta`` so every copy
    carries the same thermal weight.  ``driver`` is ``"uniform"`` (uniform
    proposals over the expanded space) or ``"lift"`` (``P(b|a)`` split evenly
    over the copies of ``b``).

    Returns
    -------
    (MhModel, numpy.ndarray)
        The expanded model and the parent index of every expanded state.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    if model.beta == 0:
        raise ValidationError("embedding needs beta > 0 (energy shifts scale with 1/beta)")
    be = model.beta * model.energy
    # small guard so exact integers such as 2 * exp(log 2) are not floored down
    sizes = np.floor(n * np.exp(be.max() - be) * (1 + 1e-12)).astype(np.int64)
    if np.any(sizes < 1):
        raise ValidationError(f"empty internal state set for states {np.flatnonzero(sizes < 1).tolist()}")
    check_dense(int(sizes.sum()))
    parent = np.repeat(np.arange(model.size), sizes)
    energy = model.energy[parent] + np.log(sizes[parent]) / model.beta
    total = parent.size
    if driver == "uniform":
        drv = np.full((total, total), 1.0 / total)
    elif driver == "lift":
        drv = model.driver[np.ix_(parent, parent)] / sizes[parent][None, :]
    else:
        raise ValidationError(f"unknown driver mode {driver!r}")
    return MhModel(energy, model.beta, drv), parent


def coarse_grain_kernel(kernel, p, f) -> tuple[np.ndarray, np.ndarray]:
    """Stationary coarse-grained kernel and distribution for the map ``f``.

    ``f`` is an integer array giving the observation of every state.
    """
    k = np.asarray(kernel, dtype=float)
    p = np.asarray(p, dtype=float)
    f = np.asarray(f, dtype=np.int64)
    if f.shape != p.shape:
        raise ValidationError("coarse-graining map must be total on the state space")
    m = int(f.max()) + 1
    onehot = np.zeros((p.size, m))
    onehot[np.arange(p.size), f] = 1.0
    pbar = p @ onehot
    if np.any(pbar <= 0):
        raise ValidationError(f"observation classes {np.flatnonzero(pbar <= 0).tolist()} carry no mass")
    flux = onehot.T @ (k * p[:, None]) @ onehot
    return flux / pbar[:, None], pbar


def propagate(kernel, d0, n: int) -> np.ndarray:
    d = np.asarray(d0, dtype=float)
    k = np.asarray(kernel, dtype=float)
    for _ in range(n):
        d = d @ k
    return d


def pair_propagate(kernel, p, n: int) -> np.ndarray:
    """Joint law of ``(x_n, x_0)`` for a chain started in ``p``; ``pair[a, b]``."""
    k = np.asarray(kernel, dtype=float)
    pair = np.diag(np.asarray(p, dtype=float))
    for _ in range(n):
        pair = k.T @ pair
    return pair


@dataclass(frozen=True)
class MixingReport:
    steps: np.ndarray
    marginal_tv: np.ndarray
    marginal_bound: np.ndarray
    pair_tv: np.ndarray
    pair_bound: np.ndarray
    retention: float

    @property
    def worst_slack(self) -> float:
        return float(min((self.marginal_bound - self.marginal_tv).min(),
                         (self.pair_bound - self.pair_tv).min()))


def mixing_report(kernel, p, d0, n_steps: int) -> MixingReport:
    """Exact marginal and pair distances against their retention-rate bounds."""
    k = np.asarray(kernel, dtype=float)
    p = np.asarray(p, dtype=float)
    omega = retention_rate(k)
    tv0 = tv_distance(d0, p)
    indep = np.outer(p, p)
    steps = np.arange(1, n_steps + 1)
    marg, pair_tv = [], []
    d = np.asarray(d0, dtype=float)
    pair = np.diag(p)
    for _ in steps:
        d = d @ k
        pair = k.T @ pair
        marg.append(tv_distance(d, p))
        pair_tv.append(0.5 * float(np.abs(pair - indep).sum()))
    decay = omega ** steps
    return MixingReport(
        steps=steps,
        marginal_tv=np.array(marg),
        marginal_bound=decay * tv0,
        pair_tv=np.array(pair_tv),
        pair_bound=decay * (1.0 - float((p ** 2).sum())),
        retention=omega,
    )


def random_model(size: int, rng: np.random.Generator, beta: float | None = None,
                 sparsity: float = 0.0) -> MhModel:
    """Random energies in ``[-2, 2]`` with a random (non-symmetric) driver."""
    from .core import random_kernel

    energy = rng.uniform(-2.0, 2.0, size)
    if beta is None:
        beta = rng.uniform(0.0, 2.0)
    return MhModel(energy, beta, random_kernel(size, rng, sparsity))
