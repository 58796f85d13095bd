"""Quantum delayed-rejection update on a dense state-vector simulator.

States are complex vectors in the eigenbasis of a diagonal Hamiltonian.
SPAM operators are stacked arrays ``k_o[i]`` (measurement Kraus operators)
and ``u_c[o]`` (control unitaries).  The acceptance logic is the
:class:`~qmhlab.imprecise.DelayedRejection` object used by the classical
update, so the two differ only in how states are measured and moved.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import unitary_group

from .core import as_beta, as_energies, thermal_distribution, tv_distance
from .errors import ValidationError
from .imprecise import (
    ClassicalSpamModel,
    DelayedRejection,
    ImpreciseConfig,
    Trajectory,
    UpdateRecord,
    _CdfSampler,
    batch_means_se,
    decision_factor,
)

MAX_DIM = 64
OP_TOL = 1e-10
STATE_TOL = 1e-12
RENORM_GUARD = 1e-14


# ----------------------------------------------------------------------------
# states and operators
# ----------------------------------------------------------------------------

def as_state(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim != 1 or psi.size == 0:
        raise ValidationError("state must be a non-empty vector")
    if abs(np.linalg.norm(psi) - 1.0) > STATE_TOL:
        raise ValidationError("state must have unit norm")
    return psi


def as_density(rho, tol: float = STATE_TOL) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValidationError("density matrix must be square")
    if np.abs(rho - rho.conj().T).max() > tol:
        raise ValidationError("density matrix must be Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise ValidationError("density matrix must have unit trace")
    if np.linalg.eigvalsh(rho).min() < -1e-10:
        raise ValidationError("density matrix must be positive semidefinite")
    return rho


def basis_state(d: int, a: int) -> np.ndarray:
    psi = np.zeros(d, dtype=complex)
    psi[a] = 1.0
    return psi


def thermal_density(energy, beta) -> np.ndarray:
    return np.diag(thermal_distribution(energy, beta)).astype(complex)


def trace_distance(r1, r2) -> float:
    """Half the sum of singular values of ``r1 - r2``."""
    r1 = np.asarray(r1, dtype=complex)
    r2 = np.asarray(r2, dtype=complex)
    if r1.shape != r2.shape:
        raise ValidationError(f"dimension mismatch: {r1.shape} vs {r2.shape}")
    return 0.5 * float(np.linalg.svd(r1 - r2, compute_uv=False).sum())


def _max_entry(m) -> float:
    return float(np.abs(m).max()) if np.size(m) else 0.0


@dataclass(frozen=True)
class DiagonalHamiltonian:
    energy: np.ndarray
    sigma: float

    def __post_init__(self):
        energy = as_energies(self.energy)
        if energy.size > MAX_DIM:
            raise ValidationError(f"dimension capped at {MAX_DIM}")
        sigma = float(self.sigma)
        if not np.isfinite(sigma) or sigma < 0:
            raise ValidationError("sigma must be finite and non-negative")
        object.__setattr__(self, "energy", energy)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.energy.size

    def matrix(self) -> np.ndarray:
        return np.diag(self.energy).astype(complex)

    def gaussian_factor(self, omega: float) -> np.ndarray:
        """Diagonal of ``K_E(omega)``."""
        s = self.sigma
        return np.exp(-((omega - self.energy) ** 2) / (4 * s * s)) / (2 * np.pi * s * s) ** 0.25


@dataclass(frozen=True)
class QuantumSpamModel:
    """Measurement Kraus operators ``k_o[i]`` and control unitaries ``u_c[o]``."""

    k_o: np.ndarray
    u_c: np.ndarray
    validate: bool = field(default=True, compare=False)

    def __post_init__(self):
        k_o = np.asarray(self.k_o, dtype=complex)
        u_c = np.asarray(self.u_c, dtype=complex)
        if k_o.ndim != 3 or k_o.shape[1] != k_o.shape[2]:
            raise ValidationError("k_o must have shape (O, d, d)")
        if u_c.shape != k_o.shape:
            raise ValidationError("u_c must have the same shape as k_o")
        if k_o.shape[1] > MAX_DIM:
            raise ValidationError(f"dimension capped at {MAX_DIM}")
        object.__setattr__(self, "k_o", k_o)
        object.__setattr__(self, "u_c", u_c)
        if self.validate:
            gaps = self.invariant_gaps()
            for name, gap in gaps.items():
                if gap > OP_TOL:
                    raise ValidationError(f"SPAM {name} violated by {gap:.3g}")

    @property
    def dim(self) -> int:
        return self.k_o.shape[1]

    @property
    def obs_size(self) -> int:
        return self.k_o.shape[0]

    def invariant_gaps(self) -> dict[str, float]:
        eye = np.eye(self.dim)
        completeness = np.einsum("iba,ibc->ac", self.k_o.conj(), self.k_o) - eye
        unitarity = max(_max_entry(u.conj().T @ u - eye) for u in self.u_c)
        return {
            "completeness": _max_entry(completeness),
            "unitarity": unitarity,
            "symmetry": spam_symmetry_gap(self),
        }

    def conjugated(self, v: np.ndarray) -> "QuantumSpamModel":
        """Express the operators in a new basis: ``X -> v^dag X v``."""
        vd = v.conj().T
        return QuantumSpamModel(vd @ self.k_o @ v, vd @ self.u_c @ v, self.validate)

    @classmethod
    def idle(cls, d: int) -> "QuantumSpamModel":
        eye = np.eye(d, dtype=complex)[None]
        return cls(eye.copy(), eye.copy())


def spam_symmetry_gap(spam: QuantumSpamModel) -> float:
    """Largest entry of ``U_C(o) K_O(i) - K_O^dag(o) U_C^dag(i)`` over all ``(o, i)``."""
    lhs = np.einsum("oab,ibc->oiac", spam.u_c, spam.k_o)
    rhs = np.einsum("oba,icb->oiac", spam.k_o.conj(), spam.u_c.conj())
    return _max_entry(lhs - rhs)


def typical_spam_builder(basis, j: int, obs_size: int) -> QuantumSpamModel:
    """Swap-and-transfer SPAM built from an orthonormal basis.

    Basis column ``o * m + n`` is ``kappa_n(o)`` with ``m = d / |O|``.
    ``K_O(i)`` moves subspace ``i`` onto subspace ``j``; ``U_C(o)`` swaps
    subspaces ``o`` and ``j`` and acts as the identity elsewhere.
    """
    basis = np.asarray(basis, dtype=complex)
    d = basis.shape[0]
    if basis.shape != (d, d):
        raise ValidationError("basis must be a square matrix")
    if _max_entry(basis.conj().T @ basis - np.eye(d)) > OP_TOL:
        raise ValidationError("basis must be unitary")
    if obs_size < 1 or d % obs_size:
        raise ValidationError(f"|S|={d} is not divisible by |O|={obs_size}")
    if not 0 <= j < obs_size:
        raise ValidationError("j must be an observation label")
    m = d // obs_size
    kappa = basis.T.reshape(obs_size, m, d)       # kappa[o, n] is a column vector

    def proj(x, y):
        return np.einsum("na,nb->ab", kappa[x], kappa[y].conj())

    k_o = np.stack([proj(j, i) for i in range(obs_size)])
    u_c = np.stack([np.eye(d) + proj(o, j) + proj(j, o) - proj(o, o) - proj(j, j)
                    for o in range(obs_size)])
    return QuantumSpamModel(k_o, u_c)


def random_spam(d: int, obs_size: int, rng: np.random.Generator, j: int | None = None) -> QuantumSpamModel:
    basis = unitary_group.rvs(d, random_state=rng) if d > 1 else np.eye(1, dtype=complex)
    if j is None:
        j = int(rng.integers(obs_size))
    return typical_spam_builder(basis, j, obs_size)


def diagonalize(h_matrix, sigma: float, spam: QuantumSpamModel | None = None):
    """Rotate a Hermitian ``H`` and its SPAM operators into the eigenbasis of ``H``."""
    h = np.asarray(h_matrix, dtype=complex)
    if _max_entry(h - h.conj().T) > OP_TOL:
        raise ValidationError("Hamiltonian must be Hermitian")
    energy, v = np.linalg.eigh(h)
    ham = DiagonalHamiltonian(energy, sigma)
    return ham, (spam.conjugated(v) if spam is not None else None), v


def is_classical_spam(spam: QuantumSpamModel, tol: float = OP_TOL) -> bool:
    """Every column of every operator has at most one nonzero entry."""
    ops = np.concatenate([spam.k_o, spam.u_c])
    return bool(np.all((np.abs(ops) > tol).sum(axis=1) <= 1))


def classical_spam_from_quantum(spam: QuantumSpamModel) -> ClassicalSpamModel:
    """Transition tables of a SPAM model that maps basis states to basis states."""
    if not is_classical_spam(spam):
        raise ValidationError("SPAM operators mix basis states; no classical counterpart")
    p_o = np.abs(spam.k_o.transpose(2, 0, 1)) ** 2      # [a, i, b] = |<b|K_O(i)|a>|^2
    p_c = np.abs(spam.u_c.transpose(0, 2, 1)) ** 2      # [o, a, b] = |<b|U_C(o)|a>|^2
    return ClassicalSpamModel(p_o, p_c)


# ----------------------------------------------------------------------------
# measurements
# ----------------------------------------------------------------------------

def qpe_measure(psi, ham: DiagonalHamiltonian, rng: np.random.Generator) -> tuple[float, np.ndarray]:
    """Gaussian-filtered energy measurement.

    Draws an eigenindex by population, then ``omega`` from a Gaussian
    around its energy; this is exactly the outcome law of ``K_E``.  The
    post-state is ``K_E(omega) psi`` renormalised, built in log space.
    """
    if ham.sigma <= 0:
        raise ValidationError("energy measurement needs sigma > 0")
    pop = np.abs(psi) ** 2
    a = _sample(pop, rng)
    omega = float(rng.normal(ham.energy[a], ham.sigma))
    log_amp = -((omega - ham.energy) ** 2) / (4 * ham.sigma ** 2)
    live = pop > 0
    log_amp = log_amp - log_amp[live].max()
    out = np.where(live, psi * np.exp(log_amp), 0.0)
    return omega, out / np.linalg.norm(out)


def _sample(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(k, cdf.size - 1)


def povm_measure(psi, spam: QuantumSpamModel, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """Measure with ``K_O`` and collapse onto the outcome's branch."""
    branches = spam.k_o @ psi
    probs = np.einsum("ia,ia->i", branches.conj(), branches).real
    probs = np.where(probs > RENORM_GUARD, probs, 0.0)
    i = _sample(probs, rng)
    return i, branches[i] / np.sqrt(probs[i])


def outcome_probabilities(psi, spam: QuantumSpamModel) -> np.ndarray:
    branches = spam.k_o @ psi
    return np.einsum("ia,ia->i", branches.conj(), branches).real


# ----------------------------------------------------------------------------
# the update
# ----------------------------------------------------------------------------

class QuantumSampler:
    """Repeated quantum updates for one Hamiltonian, SPAM model and configuration."""

    def __init__(self, ham: DiagonalHamiltonian, spam: QuantumSpamModel, cfg: ImpreciseConfig):
        if spam.dim != ham.dim:
            raise ValidationError("Hamiltonian and SPAM model disagree on the dimension")
        if cfg.obs_size != spam.obs_size:
            raise ValidationError("driver and SPAM model disagree on the observation count")
        if abs(cfg.sigma - ham.sigma) > 0:
            raise ValidationError("configuration and Hamiltonian disagree on sigma")
        self.ham, self.spam, self.cfg = ham, spam, cfg
        self._drv = _CdfSampler(cfg.driver)

    def step(self, psi: np.ndarray, rng: np.random.Generator) -> tuple[UpdateRecord, np.ndarray]:
        cfg, ham, spam = self.cfg, self.ham, self.spam
        omega0, psi = qpe_measure(psi, ham, rng)
        i, psi = povm_measure(psi, spam, rng)
        o = self._drv(rng, i)
        psi = spam.u_c[o] @ psi
        dr = DelayedRejection(cfg.driver, cfg.beta, cfg.sigma, i, o, omega0)
        omega, psi = qpe_measure(psi, ham, rng)
        dr.first(omega)
        u = rng.random()
        obs, omegas = [o, i], [omega0, omega]
        n = 1
        while not dr.halts(u) and n < cfg.n_max:
            prev_o, prev_w = obs[-1], omegas[-1]
            i, psi = povm_measure(psi, spam, rng)
            psi = spam.u_c[prev_o] @ psi
            omega, psi = qpe_measure(psi, ham, rng)
            dr.extend(prev_o, i, prev_w, omega)
            u = rng.random()
            obs.append(i)
            omegas.append(omega)
            n += 1
        psi = psi / np.linalg.norm(psi)
        rec = UpdateRecord(Trajectory(np.array(obs), np.array(omegas)), None, n, not dr.halts(u))
        return rec, psi

    def run(self, psi: np.ndarray, steps: int, rng: np.random.Generator):
        records = []
        for _ in range(steps):
            rec, psi = self.step(psi, rng)
            records.append(rec)
        return records, psi


def qmh_step(psi, ham: DiagonalHamiltonian, spam: QuantumSpamModel, cfg: ImpreciseConfig,
             rng: np.random.Generator) -> tuple[UpdateRecord, np.ndarray]:
    """One quantum delayed-rejection update of the pure state ``psi``."""
    return QuantumSampler(ham, spam, cfg).step(as_state(psi), rng)


def eigen_population_fidelity(psi) -> float:
    """Overlap of ``psi`` with its closest energy eigenstate."""
    return float((np.abs(psi) ** 2).max())


# ----------------------------------------------------------------------------
# Kraus operators of whole trajectories
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryKraus:
    trajectory: Trajectory
    matrix: np.ndarray
    zero: bool


def symmetric_component(traj: Trajectory, ham: DiagonalHamiltonian,
                        spam: QuantumSpamModel) -> np.ndarray:
    """``sum_s kappa(gamma, b, s, a)`` as a matrix: Gaussian factors interleaved with ``U_C K_O``."""
    mat = np.diag(ham.gaussian_factor(traj.omega[0])).astype(complex)
    for m in range(traj.n):
        step = spam.u_c[traj.obs[m]] @ spam.k_o[traj.obs[m + 1]]
        mat = ham.gaussian_factor(traj.omega[m + 1])[:, None] * (step @ mat)
    return mat


def trajectory_kraus(traj: Trajectory, ham: DiagonalHamiltonian, spam: QuantumSpamModel,
                     driver, beta: float, n_max: int | None = None) -> TrajectoryKraus:
    """Kraus operator the update applies when it records ``traj``."""
    dec = decision_factor(traj, driver, beta, ham.sigma, n_max)
    mat = symmetric_component(traj, ham, spam) * np.sqrt(dec)
    return TrajectoryKraus(traj, mat, dec == 0)


def balance_operator(traj: Trajectory, ham: DiagonalHamiltonian, spam: QuantumSpamModel,
                     driver, beta: float) -> np.ndarray:
    """``kappa(gamma) sqrt(dec(gamma + beta sigma^2)) exp(-beta omega_0 / 2)`` for unshifted ``gamma``."""
    shift = beta * ham.sigma ** 2
    dec = decision_factor(traj.shift_oldest(shift), driver, beta, ham.sigma)
    return symmetric_component(traj, ham, spam) * np.sqrt(dec) * np.exp(-beta * traj.omega[0] / 2)


def quantum_balance_check(traj: Trajectory, ham: DiagonalHamiltonian, spam: QuantumSpamModel,
                          driver, beta: float, literal: bool = False) -> float:
    """Largest entry of ``M(gamma) - M(reversed gamma)^dag``.

    By default ``M`` keeps the Gaussian factors at the unshifted energies
    and only the decision factor sees the ``beta sigma^2`` offset; this is
    the form that holds for every trajectory.  ``literal=True`` instead
    shifts the Gaussian factor of the oldest energy as well, which does not
    balance pointwise (the offset only cancels after integrating over it).
    """
    if literal:
        shift = beta * ham.sigma ** 2

        def op(t):
            k = trajectory_kraus(t.shift_oldest(shift), ham, spam, driver, beta).matrix
            return k * np.exp(-beta * t.omega[0] / 2)
    else:
        def op(t):
            return balance_operator(t, ham, spam, driver, beta)
    return _max_entry(op(traj) - op(traj.reversed()).conj().T)


# ----------------------------------------------------------------------------
# channels
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelEstimate:
    mean: np.ndarray
    se: np.ndarray
    truncation_rate: float
    shots: int


def _purify_sampler(rho: np.ndarray):
    vals, vecs = np.linalg.eigh(rho)
    vals = np.clip(vals, 0, None)
    return vals / vals.sum(), vecs


def channel_apply_mc(rho_in, ham: DiagonalHamiltonian, spam: QuantumSpamModel, cfg: ImpreciseConfig,
                     shots: int, rng: np.random.Generator) -> ChannelEstimate:
    """Monte Carlo estimate of the update's output density matrix for input ``rho_in``."""
    if shots < 1:
        raise ValidationError("shots must be >= 1")
    rho_in = as_density(rho_in)
    probs, vecs = _purify_sampler(rho_in)
    sampler = QuantumSampler(ham, spam, cfg)
    d = ham.dim
    acc = np.zeros((d, d), dtype=complex)
    acc2 = np.zeros((d, d))
    trunc = 0
    for _ in range(shots):
        psi = vecs[:, _sample(probs, rng)]
        rec, out = sampler.step(psi, rng)
        outer = np.outer(out, out.conj())
        acc += outer
        acc2 += np.abs(outer) ** 2
        trunc += rec.truncated
    mean = acc / shots
    var = np.clip(acc2 / shots - np.abs(mean) ** 2, 0, None)
    se = np.sqrt(var / max(shots - 1, 1))
    return ChannelEstimate(mean, se, trunc / shots, shots)


def _tomography_inputs(d: int) -> list[np.ndarray]:
    states = [basis_state(d, a) for a in range(d)]
    for a in range(d):
        for b in range(a + 1, d):
            for phase in (1.0, 1j):
                v = basis_state(d, a) + phase * basis_state(d, b)
                states.append(v / np.sqrt(2))
    return states


@dataclass(frozen=True)
class ChannelModel:
    """Linear-inversion estimate of the update as a superoperator.

    ``superop`` acts on row-major vectorised matrices.  ``truncation_op``
    is the Hermitian operator whose expectation is the truncation
    probability of an input state.
    """

    superop: np.ndarray
    truncation_op: np.ndarray
    shots_per_input: int

    @property
    def dim(self) -> int:
        return self.truncation_op.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        d = self.dim
        return (self.superop @ x.reshape(-1)).reshape(d, d)

    def eps_max(self) -> float:
        return float(np.linalg.eigvalsh(self.truncation_op).max())

    def retention_estimate(self, rng: np.random.Generator, probes: int = 200) -> float:
        """Heuristic retention rate: the largest pair-contraction seen over probe pairs.

        The trace-norm retention rate is attained at differences of
        orthogonal pure states.  Probes are the basis pairs, random
        orthogonal pairs and a few rounds of power iteration on the
        traceless part of the superoperator.  Sampling noise in the
        superoperator biases the result upward.
        """
        d = self.dim
        best = 0.0

        def ratio(x):
            norm = np.linalg.svd(x, compute_uv=False).sum()
            return np.linalg.svd(self.apply(x), compute_uv=False).sum() / norm if norm > 0 else 0.0

        for a in range(d):
            for b in range(a + 1, d):
                x = np.zeros((d, d), dtype=complex)
                x[a, a], x[b, b] = 1, -1
                best = max(best, ratio(x))
        for _ in range(probes):
            q = unitary_group.rvs(d, random_state=rng) if d > 1 else np.eye(1)
            x = np.outer(q[:, 0], q[:, 0].conj()) - np.outer(q[:, 1], q[:, 1].conj())
            best = max(best, ratio(x))
        x = np.diag(np.linspace(-1, 1, d)).astype(complex)
        for _ in range(50):
            y = self.apply(x)
            y = 0.5 * (y + y.conj().T)
            y -= np.trace(y) / d * np.eye(d)
            if np.abs(y).max() == 0:
                break
            x = y / np.abs(y).max()
            best = max(best, ratio(x))
        return float(min(1.0, best))


def estimate_channel(ham: DiagonalHamiltonian, spam: QuantumSpamModel, cfg: ImpreciseConfig,
                     shots_per_input: int, rng: np.random.Generator) -> ChannelModel:
    """Tomographic estimate of the update channel from ``d^2`` pure inputs."""
    d = ham.dim
    sampler = QuantumSampler(ham, spam, cfg)
    inputs = _tomography_inputs(d)
    a_cols, b_cols, t_vals = [], [], []
    for psi in inputs:
        acc = np.zeros((d, d), dtype=complex)
        trunc = 0
        for _ in range(shots_per_input):
            rec, out = sampler.step(psi, rng)
            acc += np.outer(out, out.conj())
            trunc += rec.truncated
        a_cols.append(np.outer(psi, psi.conj()).reshape(-1))
        b_cols.append((acc / shots_per_input).reshape(-1))
        t_vals.append(trunc / shots_per_input)
    a = np.array(a_cols).T
    b = np.array(b_cols).T
    superop = b @ np.linalg.inv(a)
    # tr(T rho_k) = t_k with T Hermitian: solve for vec(T^T) against vec(rho_k)
    t_vec = np.linalg.solve(a.T, np.array(t_vals, dtype=complex))
    t_op = t_vec.reshape(d, d).T
    t_op = 0.5 * (t_op + t_op.conj().T)
    return ChannelModel(superop, t_op, shots_per_input)


@dataclass(frozen=True)
class PairMixingReport:
    distances: np.ndarray
    se: np.ndarray
    initial_exact: float

    def nonincreasing_within(self, k: float = 4.0) -> bool:
        d, s = self.distances, self.se
        return bool(np.all(d[1:] <= d[:-1] + k * np.sqrt(s[1:] ** 2 + s[:-1] ** 2)))


def pair_mixing_check(ham: DiagonalHamiltonian, spam: QuantumSpamModel, cfg: ImpreciseConfig,
                      n_steps: int, shots: int, rng: np.random.Generator,
                      batches: int = 20) -> PairMixingReport:
    """Distance of the pair state from ``rho (x) rho`` after ``n`` updates, ``n = 0 .. n_steps``.

    The pair state is block diagonal in its second factor, so the distance
    is ``sum_a p(a) TD(rho_n(a), rho)``.  Each ``rho_n(a)`` is the average
    of ``shots`` independent chains started from ``|a>``; standard errors
    come from batch-wise recomputation of the distance.
    """
    d = ham.dim
    p = thermal_distribution(ham.energy, cfg.beta)
    rho = np.diag(p).astype(complex)
    sampler = QuantumSampler(ham, spam, cfg)
    batches = max(2, min(batches, shots))
    per_batch = shots // batches
    # sums[a, b, n] accumulates outer products for batch b
    sums = np.zeros((d, batches, n_steps + 1, d, d), dtype=complex)
    for a in range(d):
        for b in range(batches):
            for _ in range(per_batch):
                psi = basis_state(d, a)
                sums[a, b, 0] += np.outer(psi, psi.conj())
                for n in range(1, n_steps + 1):
                    _, psi = sampler.step(psi, rng)
                    sums[a, b, n] += np.outer(psi, psi.conj())
    total = sums.sum(axis=1) / (per_batch * batches)
    dist = np.array([sum(p[a] * trace_distance(total[a, n], rho) for a in range(d))
                     for n in range(n_steps + 1)])
    batch_dist = np.array([[sum(p[a] * trace_distance(sums[a, b, n] / per_batch, rho) for a in range(d))
                            for n in range(n_steps + 1)] for b in range(batches)])
    se = batch_dist.std(axis=0, ddof=1) / np.sqrt(batches)
    return PairMixingReport(dist, se, float(1 - (p ** 2).sum()))


# ----------------------------------------------------------------------------
# thermal expectations
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class QuantumObservables:
    mu_f: float
    mu_omega: float
    var_f0: float
    var_f: float
    var_omega0: float
    var_omega: float


def quantum_observables(ham: DiagonalHamiltonian, spam: QuantumSpamModel, beta: float, f) -> QuantumObservables:
    """``tr(F rho)``, ``tr(H rho)`` and the variance decomposition for the thermal state."""
    beta = as_beta(beta)
    rho = thermal_density(ham.energy, beta)
    fi = np.array([f(i) for i in range(spam.obs_size)], dtype=float)
    effects = np.einsum("iba,ibc->iac", spam.k_o.conj(), spam.k_o)
    f_op = np.einsum("i,iac->ac", fi, effects)
    probs = np.einsum("iac,ca->i", effects, rho).real
    mu_f = float(np.trace(f_op @ rho).real)
    mu_w = float(ham.energy @ np.diag(rho).real)
    centred = f_op - mu_f * np.eye(ham.dim)
    var_f0 = float(np.trace(centred @ centred @ rho).real)
    var_f = float(((fi - mu_f) ** 2) @ probs)
    var_w0 = float(((ham.energy - mu_w) ** 2) @ np.diag(rho).real)
    return QuantumObservables(mu_f, mu_w, var_f0, var_f, var_w0, var_w0 + ham.sigma ** 2)


def thermal_start(ham: DiagonalHamiltonian, beta: float, rng: np.random.Generator) -> np.ndarray:
    p = thermal_distribution(ham.energy, beta)
    return basis_state(ham.dim, _sample(p, rng))


@dataclass(frozen=True)
class StationarityReport:
    mean_omega: float
    se_omega: float
    mean_f: float
    se_f: float
    var_omega: float
    truncation_rate: float
    expected: QuantumObservables

    @property
    def z_omega(self) -> float:
        return (self.mean_omega - self.expected.mu_omega) / self.se_omega

    @property
    def z_f(self) -> float:
        return (self.mean_f - self.expected.mu_f) / self.se_f


def thermal_chain_check(ham: DiagonalHamiltonian, spam: QuantumSpamModel, cfg: ImpreciseConfig,
                        steps: int, burn_in: int, rng: np.random.Generator, f=None,
                        batches: int = 50) -> StationarityReport:
    """Run a chain from a thermally sampled eigenstate and compare its estimators with exact traces."""
    if f is None:
        f = float
    sampler = QuantumSampler(ham, spam, cfg)
    psi = thermal_start(ham, cfg.beta, rng)
    _, psi = sampler.run(psi, burn_in, rng)
    records, _ = sampler.run(psi, steps, rng)
    w = np.array([r.trajectory.omega[0] for r in records])
    fv = np.array([f(int(r.trajectory.obs[1])) for r in records], dtype=float)
    trunc = float(np.mean([r.truncated for r in records]))
    return StationarityReport(float(w.mean()), batch_means_se(w, batches), float(fv.mean()),
                              batch_means_se(fv, batches), float(w.var(ddof=1)), trunc,
                              quantum_observables(ham, spam, cfg.beta, f))


def diagonal_tv(rho1, rho2) -> float:
    return tv_distance(np.diag(rho1).real, np.diag(rho2).real)
