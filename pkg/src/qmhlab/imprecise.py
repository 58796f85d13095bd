"""Delayed-rejection Metropolis-Hastings with noisy energies and indirect state access.

Conventions
-----------
Trajectories are stored oldest first: ``obs[0], omega[0]`` is the proposed
label and the initial energy reading, ``obs[1], omega[1]`` the first
observation and the energy after the first control step, and so on.

Acceptance functions take the trajectory *as recorded by the update*,
whose oldest energy carries the ``+beta sigma^2`` offset relative to the
unbiased argument of the balance condition.  Internally everything is
evaluated on the unshifted values, where ``sigma`` no longer appears.

Drivers are row-stochastic with ``driver[i, o] = P(o|i)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate

from .core import (
    as_beta,
    as_energies,
    as_kernel,
    retention_rate,
    stationary_distribution,
    thermal_distribution,
    tv_distance,
)
from .errors import ImpossibleEventError, ValidationError

SPAM_TOL = 1e-12


# ----------------------------------------------------------------------------
# data types
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassicalSpamModel:
    """Observation and control tables.

    ``p_o[a, i, b] = P_O(i, b | a)`` and ``p_c[o, a, b] = P_C(b | o, a)``.
    """

    p_o: np.ndarray
    p_c: np.ndarray
    check_symmetry: bool = field(default=True, compare=False)

    def __post_init__(self):
        p_o = np.asarray(self.p_o, dtype=float)
        p_c = np.asarray(self.p_c, dtype=float)
        if p_o.ndim != 3 or p_o.shape[0] != p_o.shape[2]:
            raise ValidationError(f"p_o must have shape (S, O, S), got {p_o.shape}")
        s, o = p_o.shape[0], p_o.shape[1]
        if p_c.shape != (o, s, s):
            raise ValidationError(f"p_c must have shape ({o}, {s}, {s}), got {p_c.shape}")
        if np.any(p_o < 0) or np.any(p_c < 0):
            raise ValidationError("SPAM tables must be non-negative")
        if np.abs(p_o.sum(axis=(1, 2)) - 1).max() > SPAM_TOL:
            raise ValidationError("P_O(., .|a) must sum to one for every a")
        if np.abs(p_c.sum(axis=2) - 1).max() > SPAM_TOL:
            raise ValidationError("P_C(.|o, a) must sum to one for every (o, a)")
        object.__setattr__(self, "p_o", p_o)
        object.__setattr__(self, "p_c", p_c)
        if self.check_symmetry:
            gap = spam_symmetry_check(self)
            if gap > SPAM_TOL:
                raise ValidationError(f"SPAM tables violate the symmetry condition by {gap:.3g}")

    @property
    def size(self) -> int:
        return self.p_o.shape[0]

    @property
    def obs_size(self) -> int:
        return self.p_o.shape[1]

    @cached_property
    def composite(self) -> np.ndarray:
        """``ps[o, a, i, b] = P_S(i, b | o, a) = sum_c P_C(b|o,c) P_O(i,c|a)``."""
        return np.einsum("ocb,aic->oaib", self.p_c, self.p_o)

    @classmethod
    def direct(cls, size: int) -> "ClassicalSpamModel":
        """Direct state access: observe the state, then set it to the label."""
        eye = np.eye(size)
        p_o = np.einsum("ai,ab->aib", eye, eye)
        p_c = np.broadcast_to(eye[:, None, :], (size, size, size)).copy()
        return cls(p_o, p_c)

    @classmethod
    def idle(cls, size: int) -> "ClassicalSpamModel":
        """One observation label that leaves the state untouched."""
        eye = np.eye(size)
        return cls(eye[:, None, :].copy(), eye[None, :, :].copy())


def spam_symmetry_check(spam: ClassicalSpamModel) -> float:
    """Largest ``|P_S(i,b|o,a) - P_S(o,a|i,b)|``."""
    ps = spam.composite
    return float(np.abs(ps - ps.transpose(2, 3, 0, 1)).max())


@dataclass(frozen=True)
class Trajectory:
    """Observation labels and energies of one update, oldest first."""

    obs: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.obs, dtype=np.int64)
        omega = np.asarray(self.omega, dtype=float)
        if obs.ndim != 1 or obs.shape != omega.shape:
            raise ValidationError("obs and omega must be vectors of equal length")
        if obs.size < 2:
            raise ValidationError("a trajectory has at least two entries")
        if not np.all(np.isfinite(omega)):
            raise ValidationError("trajectory energies must be finite")
        object.__setattr__(self, "obs", obs)
        object.__setattr__(self, "omega", omega)

    @property
    def n(self) -> int:
        return self.obs.size - 1

    def reversed(self) -> "Trajectory":
        return Trajectory(self.obs[::-1], self.omega[::-1])

    def shift_oldest(self, delta: float) -> "Trajectory":
        omega = self.omega.copy()
        omega[0] += delta
        return Trajectory(self.obs, omega)

    def prefix(self, k: int) -> "Trajectory":
        """The trajectory after ``k`` loop iterations (``k + 1`` entries)."""
        return Trajectory(self.obs[:k + 1], self.omega[:k + 1])

    def to_pairs(self) -> list[list]:
        return [[int(o), float(w)] for o, w in zip(self.obs, self.omega)]

    @classmethod
    def from_pairs(cls, pairs) -> "Trajectory":
        obs, omega = zip(*pairs)
        return cls(np.array(obs), np.array(omega))


@dataclass(frozen=True)
class ImpreciseConfig:
    sigma: float
    n_max: int
    driver: np.ndarray
    beta: float

    def __post_init__(self):
        sigma = float(self.sigma)
        if not np.isfinite(sigma) or sigma < 0:
            raise ValidationError("sigma must be finite and non-negative")
        if int(self.n_max) < 1:
            raise ValidationError("n_max must be >= 1")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "n_max", int(self.n_max))
        object.__setattr__(self, "driver", as_kernel(self.driver))
        object.__setattr__(self, "beta", as_beta(self.beta))

    @property
    def obs_size(self) -> int:
        return self.driver.shape[0]

    @property
    def bias_shift(self) -> float:
        return self.beta * self.sigma ** 2


@dataclass(frozen=True)
class ImpreciseModel:
    """Hidden-state energies together with the SPAM tables that reach them."""

    energy: np.ndarray
    spam: ClassicalSpamModel

    def __post_init__(self):
        energy = as_energies(self.energy)
        if energy.size != self.spam.size:
            raise ValidationError("energy table and SPAM model disagree on the state count")
        object.__setattr__(self, "energy", energy)

    @property
    def size(self) -> int:
        return self.energy.size


@dataclass(frozen=True)
class UpdateRecord:
    trajectory: Trajectory
    final_state: int | None
    halted_at: int
    truncated: bool


# ----------------------------------------------------------------------------
# acceptance probabilities
# ----------------------------------------------------------------------------

def _x_values(obs: np.ndarray, omega: np.ndarray, driver: np.ndarray, beta: float) -> np.ndarray:
    """Partial sums ``x_0 .. x_n`` on unshifted energies, in units of ``exp(-beta omega_0)``.

    ``omega`` may carry leading batch dimensions.
    """
    w = np.exp(-beta * (omega - omega[..., :1]))
    fwd = w[..., :-1] * driver[obs[1:], obs[:-1]]
    bwd = w[..., 1:] * driver[obs[:-1], obs[1:]]
    return np.concatenate([fwd[..., :1], np.cumsum(fwd - bwd, axis=-1)], axis=-1)


def _acceptances(x: np.ndarray) -> np.ndarray:
    """``A_k`` for every prefix ``k = 1..n``; degenerate prefixes get 1.

    A prefix is degenerate when an earlier partial sum is <= 0.  That
    earlier step then accepts with certainty, so whatever is stored here is
    always multiplied by a zero rejection product.
    """
    running_min = np.minimum.accumulate(x[..., :-1], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        acc = np.clip((running_min - x[..., 1:]) / running_min, 0.0, 1.0)
    return np.where(running_min > 0, acc, 1.0)


def _unshift(traj: Trajectory, beta: float, sigma: float) -> np.ndarray:
    omega = traj.omega.copy()
    omega[0] -= beta * sigma ** 2
    return omega


def accept_explicit(traj: Trajectory, driver, beta: float, sigma: float) -> float:
    """Closed-form acceptance probability of the newest entry of ``traj``.

    Raises
    ------
    ImpossibleEventError
        If the denominator ``max{0, min_r x_r}`` vanishes.
    """
    driver = np.asarray(driver, dtype=float)
    x = _x_values(traj.obs, _unshift(traj, beta, sigma), driver, beta)
    m = x[:-1].min()
    if m <= 0:
        raise ImpossibleEventError("acceptance denominator is zero; the trajectory cannot occur")
    return float(min(1.0, max(0.0, m - x[-1]) / m))


def accept_recursive(traj: Trajectory, driver, beta: float, sigma: float) -> float:
    """Acceptance probability from the rejection-product recursion.

    Builds the pairwise weights ``W(i -> j) = exp(-beta omega_i) P(o_i|o_next) R``
    for every contiguous sub-trajectory, each from two shorter ones, and
    returns ``min{1, W(n -> 0) / W(0 -> n)}``.  Independent of the partial
    sum formula used by :func:`accept_explicit`.
    """
    driver = np.asarray(driver, dtype=float)
    obs = traj.obs
    omega = _unshift(traj, beta, sigma)
    w = np.exp(-beta * (omega - omega[0]))
    memo: dict[tuple[int, int], float] = {}

    def weight(i: int, j: int) -> float:
        key = (i, j)
        if key not in memo:
            step = 1 if j > i else -1
            if abs(j - i) == 1:
                val = w[i] * driver[obs[j], obs[i]]
            else:
                jp = j - step
                val = max(0.0, weight(i, jp) - weight(jp, i))
            memo[key] = val
        return memo[key]

    n = traj.n
    den = weight(0, n)
    if den <= 0:
        raise ImpossibleEventError("acceptance denominator is zero; the trajectory cannot occur")
    return float(min(1.0, weight(n, 0) / den))


def minmax_identity(xs, y: float) -> tuple[float, float]:
    """Both sides of ``max{0, max{0, min X} + min{0, y - min X}} = max{0, min(X + {y})}``."""
    mx = min(xs)
    lhs = max(0.0, max(0.0, mx) + min(0.0, y - mx))
    rhs = max(0.0, min(min(xs), y))
    return lhs, rhs


def partial_sum_identity(b) -> tuple[float, float]:
    """Both sides of the forward/backward partial-sum max/min identity (``len(b) >= 2``)."""
    b = np.asarray(b, dtype=float)
    if b.size < 2:
        raise ValidationError("need at least two terms")
    lhs = float(np.cumsum(b[:-1]).max())
    rhs = float(b.sum() - np.cumsum(b[::-1][:-1]).min())
    return lhs, rhs


def rejection_product(traj: Trajectory, driver, beta: float, sigma: float) -> float:
    """Probability ``R`` that every earlier prefix of ``traj`` was rejected."""
    x = _x_values(traj.obs, _unshift(traj, beta, sigma), np.asarray(driver, float), beta)
    acc = _acceptances(x)
    return float(np.prod(1.0 - acc[:-1]))


def decision_factor(traj: Trajectory, driver, beta: float, sigma: float,
                    n_max: int | None = None, bias_correction: bool = True) -> float:
    """Decision part of the branch probability of a recorded trajectory.

    ``P(o_0|o_1) A R`` below the loop cap, ``P(o_0|o_1) R`` at the cap and
    zero beyond it.  ``bias_correction=False`` drops the ``beta sigma^2``
    offset from the acceptance (used to show that the offset is needed).
    """
    driver = np.asarray(driver, dtype=float)
    n = traj.n
    if n_max is not None and n > n_max:
        return 0.0
    omega = _unshift(traj, beta, sigma) if bias_correction else traj.omega
    x = _x_values(traj.obs, omega, driver, beta)
    acc = _acceptances(x)
    prior = driver[traj.obs[1], traj.obs[0]]
    reject = np.prod(1.0 - acc[:-1])
    if n_max is not None and n == n_max:
        return float(prior * reject)
    return float(prior * acc[-1] * reject)


# ----------------------------------------------------------------------------
# the update
# ----------------------------------------------------------------------------

class DelayedRejection:
    """Running ``x`` / ``x_min`` bookkeeping shared by the classical and quantum updates.

    Values are stored in units of ``exp(-beta omega_0 + beta^2 sigma^2)`` so
    nothing underflows at large ``beta``; the halting test is scale free.
    """

    def __init__(self, driver: np.ndarray, beta: float, sigma: float,
                 first_obs: int, proposal: int, omega0: float):
        self.driver = driver
        self.beta = beta
        self.log_scale = -beta * omega0 + beta ** 2 * sigma ** 2
        self.x_min = driver[first_obs, proposal]
        self.x = None
        self._first = first_obs
        self._proposal = proposal

    def _boltzmann(self, omega: float) -> float:
        return np.exp(-self.beta * omega - self.log_scale)

    def first(self, omega: float) -> None:
        self.x = self.x_min - self._boltzmann(omega) * self.driver[self._proposal, self._first]

    def extend(self, prev_obs: int, new_obs: int, prev_omega: float, new_omega: float) -> None:
        self.x_min = min(self.x_min, self.x)
        self.x += self._boltzmann(prev_omega) * self.driver[new_obs, prev_obs]
        self.x -= self._boltzmann(new_omega) * self.driver[prev_obs, new_obs]

    def halts(self, u: float) -> bool:
        # the loop continues on strict x > x_min u
        return not self.x > self.x_min * u


class _CdfSampler:
    def __init__(self, probs: np.ndarray):
        self.cdf = np.cumsum(probs, axis=-1)

    def __call__(self, rng: np.random.Generator, *index) -> int:
        cdf = self.cdf[index]
        k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        return min(k, cdf.size - 1)


class ImpreciseSampler:
    """Pre-tabulated samplers for repeated updates on one model."""

    def __init__(self, model: ImpreciseModel, cfg: ImpreciseConfig):
        if cfg.obs_size != model.spam.obs_size:
            raise ValidationError("driver and SPAM model disagree on the observation count")
        self.model = model
        self.cfg = cfg
        s = model.size
        self._obs = _CdfSampler(model.spam.p_o.reshape(s, -1))
        self._ctrl = _CdfSampler(model.spam.p_c)
        self._drv = _CdfSampler(cfg.driver)

    def observe(self, a: int, rng) -> tuple[int, int]:
        k = self._obs(rng, a)
        return divmod(k, self.model.size)

    def control(self, o: int, c: int, rng) -> int:
        return self._ctrl(rng, o, c)

    def energy(self, a: int, rng) -> float:
        return float(rng.normal(self.model.energy[a], self.cfg.sigma))

    def step(self, a: int, rng: np.random.Generator) -> UpdateRecord:
        cfg = self.cfg
        omega0 = self.energy(a, rng)
        i, c = self.observe(a, rng)
        o = self._drv(rng, i)
        a = self.control(o, c, rng)
        dr = DelayedRejection(cfg.driver, cfg.beta, cfg.sigma, i, o, omega0)
        omega = self.energy(a, rng)
        dr.first(omega)
        u = rng.random()
        obs, omegas = [o, i], [omega0, omega]
        n = 1
        while not dr.halts(u) and n < cfg.n_max:
            prev_o, prev_w = obs[-1], omegas[-1]
            i, c = self.observe(a, rng)
            a = self.control(prev_o, c, rng)
            omega = self.energy(a, rng)
            dr.extend(prev_o, i, prev_w, omega)
            u = rng.random()
            obs.append(i)
            omegas.append(omega)
            n += 1
        return UpdateRecord(Trajectory(np.array(obs), np.array(omegas)), a, n, not dr.halts(u))

    def run(self, a0: int, steps: int, rng: np.random.Generator) -> list[UpdateRecord]:
        records = []
        a = int(a0)
        for _ in range(steps):
            rec = self.step(a, rng)
            a = rec.final_state
            records.append(rec)
        return records


def imh_step(model: ImpreciseModel, cfg: ImpreciseConfig, a: int,
             rng: np.random.Generator) -> UpdateRecord:
    """One delayed-rejection update from hidden state ``a``."""
    return ImpreciseSampler(model, cfg).step(a, rng)


# ----------------------------------------------------------------------------
# branch probabilities
# ----------------------------------------------------------------------------

def _gaussian_pdf(x, mean, sigma):
    return np.exp(-0.5 * ((x - mean) / sigma) ** 2) / (np.sqrt(2 * np.pi) * sigma)


def branch_probability(traj: Trajectory, path, model: ImpreciseModel, cfg: ImpreciseConfig) -> float:
    """Joint density of a recorded trajectory and the hidden path ``a_0 .. a_n``."""
    path = np.asarray(path, dtype=np.int64)
    if path.size != traj.obs.size:
        raise ValidationError("hidden path must have one state per trajectory entry")
    if cfg.sigma <= 0:
        raise ValidationError("branch densities need sigma > 0")
    gauss = np.prod(_gaussian_pdf(traj.omega, model.energy[path], cfg.sigma))
    ps = model.spam.composite
    spam = np.prod(ps[traj.obs[:-1], path[:-1], traj.obs[1:], path[1:]])
    dec = decision_factor(traj, cfg.driver, cfg.beta, cfg.sigma, cfg.n_max)
    return float(gauss * spam * dec)


@dataclass(frozen=True)
class BranchBalance:
    lhs: float
    rhs: float

    @property
    def violation(self) -> float:
        return abs(self.lhs - self.rhs)


def branch_balance_check(traj: Trajectory, driver, beta: float, sigma: float,
                         bias_correction: bool = True) -> BranchBalance:
    """Both sides of the per-trajectory balance condition.

    ``traj`` is the unshifted argument; the acceptance is evaluated at
    ``traj`` and at its time reversal, each with the oldest energy raised
    by ``beta sigma^2``.  Degenerate branches contribute zero on both sides.
    """
    shift = beta * sigma ** 2

    def side(t: Trajectory) -> float:
        dec = decision_factor(t.shift_oldest(shift), driver, beta, sigma,
                              bias_correction=bias_correction)
        return dec * np.exp(-beta * t.omega[0])

    return BranchBalance(side(traj), side(traj.reversed()))


def random_trajectory(n: int, obs_size: int, rng: np.random.Generator,
                      energy_scale: float = 1.0) -> Trajectory:
    return Trajectory(rng.integers(0, obs_size, n + 1), rng.normal(0.0, energy_scale, n + 1))


# ----------------------------------------------------------------------------
# Gaussian identity
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianIdentity:
    lhs: float
    rhs: float

    @property
    def violation(self) -> float:
        return abs(self.lhs - self.rhs)


def gaussian_identity_check(energy: float, beta: float, sigma: float, f) -> GaussianIdentity:
    """Both sides of the Boltzmann-weight switching identity, divided by ``sqrt(2 pi) sigma``.

    Integrates over ``energy +- (12 sigma + beta sigma^2)`` with adaptive
    quadrature.  At ``sigma = 0`` both sides reduce to ``exp(-beta E) f(E)``.
    """
    if sigma == 0:
        val = float(np.exp(-beta * energy) * f(energy))
        return GaussianIdentity(val, val)
    shift = beta * sigma ** 2
    lo, hi = energy - 12 * sigma - shift, energy + 12 * sigma + shift
    norm = np.sqrt(2 * np.pi) * sigma

    def g(w):
        return np.exp(-((w - energy) ** 2) / (2 * sigma ** 2))

    lhs, _ = integrate.quad(lambda w: g(w) * np.exp(-beta * energy) * f(w), lo, hi,
                            epsabs=1e-13, epsrel=1e-12, limit=200, points=[energy])
    rhs, _ = integrate.quad(lambda w: g(w) * np.exp(-beta * w) * f(w + shift), lo, hi,
                            epsabs=1e-13, epsrel=1e-12, limit=200, points=[energy - shift, energy])
    return GaussianIdentity(lhs / norm, np.exp(-(beta * sigma) ** 2 / 2) * rhs / norm)


# ----------------------------------------------------------------------------
# estimators
# ----------------------------------------------------------------------------

def batch_means_se(values: np.ndarray, batches: int = 50) -> float:
    """Standard error of the mean from non-overlapping batch means."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 2 * batches:
        return float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    size = n // batches
    means = values[:size * batches].reshape(batches, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(batches))


@dataclass(frozen=True)
class EstimatorReport:
    mean_f: float
    mean_omega: float
    var_f: float
    var_omega: float
    se_f: float
    se_omega: float
    count: int


def estimators(records, f=None, batches: int | None = 50) -> EstimatorReport:
    """Sample means and variances of ``f(o_1)`` and ``omega_0``.

    ``batches=None`` gives iid standard errors; otherwise batch means
    account for autocorrelation along a chain.
    """
    records = list(records)
    if not records:
        raise ValidationError("no update records")
    if f is None:
        f = lambda o: float(o)  # noqa: E731
    fv = np.array([f(int(r.trajectory.obs[1])) for r in records], dtype=float)
    wv = np.array([r.trajectory.omega[0] for r in records], dtype=float)

    def se(v):
        if batches is None:
            return float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
        return batch_means_se(v, batches)

    var = (lambda v: float(v.var(ddof=1)) if v.size > 1 else 0.0)
    return EstimatorReport(float(fv.mean()), float(wv.mean()), var(fv), var(wv), se(fv), se(wv), len(records))


@dataclass(frozen=True)
class ExactObservables:
    mu_f: float
    mu_omega: float
    var_f0: float
    var_f: float
    var_omega0: float
    var_omega: float


def exact_observables(model: ImpreciseModel, beta: float, sigma: float, f, p=None) -> ExactObservables:
    """Thermal (or ``p``-weighted) means and the variance decomposition of the estimators."""
    if p is None:
        p = thermal_distribution(model.energy, beta)
    fi = np.array([f(i) for i in range(model.spam.obs_size)], dtype=float)
    obs_given_a = model.spam.p_o.sum(axis=2)          # P(i|a)
    f_o = obs_given_a @ fi
    mu_f = float(f_o @ p)
    mu_w = float(model.energy @ p)
    var_f0 = float(((f_o - mu_f) ** 2) @ p)
    var_f = float(((fi[None, :] - mu_f) ** 2 * obs_given_a).sum(axis=1) @ p)
    var_w0 = float(((model.energy - mu_w) ** 2) @ p)
    return ExactObservables(mu_f, mu_w, var_f0, var_f, var_w0, var_w0 + sigma ** 2)


# ----------------------------------------------------------------------------
# exact small-instance kernels by Gauss-Hermite quadrature
# ----------------------------------------------------------------------------

def default_nodes(n: int) -> int:
    """Gauss-Hermite order per energy for an ``n``-iteration branch."""
    return int(min(64, max(8, round(4e6 ** (1.0 / (n + 1))))))


@dataclass(frozen=True)
class ExactImprecise:
    """Quadrature-integrated branch masses of the finite-cap update.

    ``kernel[a, b]`` is the full one-step kernel, ``accepted[a, b]`` only the
    accepted branches, ``truncation[a]`` the probability of rejecting all
    ``n_max`` branches, ``halting[a, n-1]`` the probability of exiting at
    iteration ``n`` and ``joint[a]`` maps ``(n, obs tuple)`` to its probability.
    """

    kernel: np.ndarray
    accepted: np.ndarray
    truncation: np.ndarray
    halting: np.ndarray
    joint: list[dict]
    completeness_error: float


def exact_kernel(model: ImpreciseModel, cfg: ImpreciseConfig, nodes=None,
                 max_states: int = 4, max_obs: int = 3, max_nmax: int = 3) -> ExactImprecise:
    """Integrate every branch of the update over its Gaussian energy readings.

    Each hidden path fixes the mean of every energy reading, so the
    Gaussian integrals are a tensor-product Gauss-Hermite rule centred on
    those means.  The decision factor has kinks from its min/max terms, so
    row sums deviate from one at the 1e-3 level with the default orders.
    """
    s, no = model.size, model.spam.obs_size
    if s > max_states or no > max_obs or cfg.n_max > max_nmax:
        raise ValidationError(
            f"exact quadrature limited to |S|<={max_states}, |O|<={max_obs}, n_max<={max_nmax}")
    ps = model.spam.composite
    drv = cfg.driver
    kernel = np.zeros((s, s))
    accepted = np.zeros((s, s))
    truncation = np.zeros(s)
    halting = np.zeros((s, cfg.n_max))
    joint = [dict() for _ in range(s)]

    for n in range(1, cfg.n_max + 1):
        order = (nodes(n) if callable(nodes) else nodes) or default_nodes(n)
        if cfg.sigma == 0:
            t, wts = np.zeros(1), np.ones(1)
        else:
            t, wts = np.polynomial.hermite_e.hermegauss(order)
            wts = wts / np.sqrt(2 * np.pi)
        grid = np.stack(np.meshgrid(*([t] * (n + 1)), indexing="ij"), axis=-1).reshape(-1, n + 1)
        gw = np.prod(np.stack(np.meshgrid(*([wts] * (n + 1)), indexing="ij"), axis=-1)
                     .reshape(-1, n + 1), axis=1)
        for obs in itertools.product(range(no), repeat=n + 1):
            obs = np.array(obs)
            prior = drv[obs[1], obs[0]]
            if prior == 0:
                continue
            for path in itertools.product(range(s), repeat=n + 1):
                path = np.array(path)
                spam_w = np.prod(ps[obs[:-1], path[:-1], obs[1:], path[1:]])
                if spam_w == 0:
                    continue
                omega = model.energy[path] + cfg.sigma * grid
                # recorded energies carry the offset on the oldest entry
                omega[:, 0] -= cfg.bias_shift
                x = _x_values(obs, omega, drv, cfg.beta)
                acc = _acceptances(x)
                reject = np.prod(1.0 - acc[:, :-1], axis=1)
                acc_mass = prior * spam_w * float(gw @ (acc[:, -1] * reject))
                a0, b = path[0], path[-1]
                if n < cfg.n_max:
                    mass = acc_mass
                else:
                    mass = prior * spam_w * float(gw @ reject)
                    truncation[a0] += mass - acc_mass
                kernel[a0, b] += mass
                accepted[a0, b] += acc_mass
                halting[a0, n - 1] += mass
                key = (n, tuple(int(v) for v in obs))
                joint[a0][key] = joint[a0].get(key, 0.0) + mass
    err = float(np.abs(kernel.sum(axis=1) - 1.0).max())
    return ExactImprecise(kernel, accepted, truncation, halting, joint, err)


# ----------------------------------------------------------------------------
# error bounds
# ----------------------------------------------------------------------------

def _ideal_retention_interval(accepted: np.ndarray, truncation: np.ndarray,
                              p: np.ndarray) -> tuple[float, float]:
    """Bracket the retention rate of the uncapped kernel.

    The uncapped kernel equals the accepted branches plus an unknown
    non-negative remainder of mass ``truncation[a]`` in each row.  For two
    states the remainder is pinned further by detailed balance.
    """
    s = p.size
    if s == 2:
        q_lo = max(accepted[0, 1], accepted[1, 0] * p[1] / p[0])
        q_hi = min(accepted[0, 1] + truncation[0], (accepted[1, 0] + truncation[1]) * p[1] / p[0])
        q_hi = max(q_hi, q_lo)
        vals = [abs(1.0 - q / p[1]) for q in (q_lo, q_hi)]
        lo = 0.0 if q_lo <= p[1] <= q_hi else min(vals)
        return lo, min(1.0, max(vals))
    diffs = 0.5 * np.abs(accepted[:, None, :] - accepted[None, :, :]).sum(axis=2)
    spread = 0.5 * (truncation[:, None] + truncation[None, :])
    return float(max(0.0, (diffs - spread).max())), float(min(1.0, (diffs + spread).max()))


@dataclass(frozen=True)
class ErrorBoundReport:
    mode: str
    eps_tilde: float
    omega_tilde: float
    eps_max: float
    eps: float | None = None
    tv: float | None = None
    omega_ideal: tuple[float, float] | None = None
    bound_ideal: float | None = None
    bound_complementary: float | None = None
    bound_measurable: float | None = None
    mu_omega_error: float | None = None
    mu_omega_bound: float | None = None
    mu_f_error: float | None = None
    mu_f_bound: float | None = None
    completeness_error: float | None = None
    flags: tuple[str, ...] = ()

    def slacks(self) -> dict[str, float]:
        out = {}
        if self.tv is not None:
            out["tv<=eps_tilde/(1-omega_ideal)"] = self.bound_ideal - self.tv
            out["tv<=eps/(1-omega_tilde)"] = self.bound_complementary - self.tv
            out["tv<=eps_tilde/max(0,1-omega_tilde-eps_max)"] = self.bound_measurable - self.tv
            out["|mu_omega error|"] = self.mu_omega_bound - self.mu_omega_error
            if self.mu_f_bound is not None:
                out["|mu_f error|"] = self.mu_f_bound - self.mu_f_error
        return out


def _safe_ratio(num: float, den: float) -> float:
    return num / den if den > 0 else float("inf")


def error_bounds(model: ImpreciseModel, cfg: ImpreciseConfig, f=None, nodes=None,
                 exact: ExactImprecise | None = None) -> ErrorBoundReport:
    """Truncation-error bounds on a quadrature-built small instance.

    The stationary state of the capped kernel is compared with the thermal
    distribution, and the three distance bounds plus the expectation-value
    bounds are evaluated.  The uncapped retention rate is only known to lie
    in an interval (see :func:`_ideal_retention_interval`); the first bound
    is evaluated at the interval's upper end, the conservative choice.
    For estimates from simulated chains see
    :func:`qmhlab.diagnostics.error_bounds_from_records`.
    """
    ex = exact or exact_kernel(model, cfg, nodes)
    kernel = ex.kernel / ex.kernel.sum(axis=1, keepdims=True)
    p = thermal_distribution(model.energy, cfg.beta)
    p_tilde = stationary_distribution(kernel)
    tv = tv_distance(p_tilde, p)
    eps_tilde = float(p_tilde @ ex.truncation)
    eps = float(p @ ex.truncation)
    eps_max = float(ex.truncation.max())
    omega_tilde = retention_rate(kernel)
    om_lo, om_hi = _ideal_retention_interval(ex.accepted, ex.truncation, p)
    den = max(0.0, 1.0 - omega_tilde - eps_max)
    flags = []
    if den == 0:
        flags.append("measurable-bound-vacuous")
    mu_err = abs(float(model.energy @ (p_tilde - p)))
    mu_bound = _safe_ratio(2 * eps_tilde * np.abs(model.energy).max(), den)
    mu_f_err = mu_f_bound = None
    if f is not None:
        fi = np.array([f(i) for i in range(model.spam.obs_size)], dtype=float)
        f_o = model.spam.p_o.sum(axis=2) @ fi
        mu_f_err = abs(float(f_o @ (p_tilde - p)))
        mu_f_bound = _safe_ratio(2 * eps_tilde * np.abs(fi).max(), den)
    return ErrorBoundReport(
        mode="exact",
        eps_tilde=eps_tilde,
        omega_tilde=omega_tilde,
        eps_max=eps_max,
        eps=eps,
        tv=tv,
        omega_ideal=(om_lo, om_hi),
        bound_ideal=_safe_ratio(eps_tilde, 1.0 - om_hi),
        bound_complementary=_safe_ratio(eps, 1.0 - omega_tilde),
        bound_measurable=_safe_ratio(eps_tilde, den),
        mu_omega_error=mu_err,
        mu_omega_bound=mu_bound,
        mu_f_error=mu_f_err,
        mu_f_bound=mu_f_bound,
        completeness_error=ex.completeness_error,
        flags=tuple(flags),
    )
