"""Aggregated balance and identity checks with optional mutation testing.

Each check evaluates the largest violation of an exact identity over
random instances.  With ``mutation=True`` it also evaluates a deliberately
broken variant, which must exceed ``detect_threshold``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .classical import MhModel, build_pm_kernel, check_detailed_balance, kernel_from_acceptance
from .core import random_kernel, thermal_distribution
from .errors import ImpossibleEventError, ValidationError
from .imprecise import (
    accept_explicit,
    accept_recursive,
    branch_balance_check,
    gaussian_identity_check,
    random_trajectory,
)
from .quantum import (
    DiagonalHamiltonian,
    QuantumSpamModel,
    quantum_balance_check,
    random_spam,
    spam_symmetry_gap,
)
from .rng import make_stream

DEFAULT_TRIALS = {
    "classical_balance": 100,
    "branch_balance": 2000,
    "acceptance_equivalence": 2000,
    "quantum_spam": 100,
    "quantum_balance": 300,
    "gaussian_identity": 20,
}
TOLERANCES = {
    "classical_balance": 1e-12,
    "branch_balance": 1e-12,
    "acceptance_equivalence": 1e-12,
    "quantum_spam": 1e-10,
    "quantum_balance": 1e-10,
    "gaussian_identity": 1e-10,
}
ALL_CHECKS = tuple(DEFAULT_TRIALS)
DETECT_THRESHOLD = 1e-6


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_violation: float
    tolerance: float
    trials: int
    skipped: int = 0
    mutant_violation: float | None = None

    @property
    def passed(self) -> bool:
        return self.max_violation < self.tolerance

    @property
    def mutation_detected(self) -> bool | None:
        if self.mutant_violation is None:
            return None
        return self.mutant_violation > DETECT_THRESHOLD

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        out["mutation_detected"] = self.mutation_detected
        return out


def _classical_balance(rng, trials, mutate):
    worst = mutant = 0.0
    for _ in range(trials):
        size = int(rng.integers(2, 9))
        model = MhModel(rng.uniform(-2, 2, size), rng.uniform(0, 2), random_kernel(size, rng, 0.3))
        p = model.thermal()
        rep = check_detailed_balance(build_pm_kernel(model), p)
        worst = max(worst, rep.max_violation, rep.stationarity_l1)
        if mutate:
            # drop the proposal ratio from the acceptance
            with np.errstate(over="ignore"):
                acc = np.minimum(1.0, np.exp(model.beta * (model.energy[:, None] - model.energy[None, :])))
            bad = kernel_from_acceptance(acc, model.driver)
            mutant = max(mutant, check_detailed_balance(bad, p).max_violation)
    return worst, mutant, 0


def _branch_balance(rng, trials, mutate):
    worst = mutant = 0.0
    for _ in range(trials):
        obs = int(rng.integers(2, 5))
        drv = random_kernel(obs, rng)
        beta, sigma = rng.uniform(0, 2), rng.uniform(0, 1)
        traj = random_trajectory(int(rng.integers(1, 7)), obs, rng)
        worst = max(worst, branch_balance_check(traj, drv, beta, sigma).violation)
        if mutate:
            sigma_m = max(sigma, 0.3)
            mutant = max(mutant, branch_balance_check(traj, drv, max(beta, 0.5), sigma_m,
                                                      bias_correction=False).violation)
    return worst, mutant, 0


def _acceptance_equivalence(rng, trials, mutate):
    worst = mutant = 0.0
    skipped = 0
    for _ in range(trials):
        obs = int(rng.integers(2, 5))
        drv = random_kernel(obs, rng)
        beta, sigma = rng.uniform(0, 2), rng.uniform(0, 1)
        traj = random_trajectory(int(rng.integers(1, 7)), obs, rng)
        try:
            a = accept_explicit(traj, drv, beta, sigma)
            b = accept_recursive(traj, drv, beta, sigma)
        except ImpossibleEventError:
            skipped += 1
            continue
        worst = max(worst, abs(a - b))
        if mutate:
            try:
                # recursive side evaluated without the bias offset
                mutant = max(mutant, abs(a - accept_recursive(traj.shift_oldest(beta * sigma ** 2 + 0.5),
                                                              drv, beta, sigma)))
            except ImpossibleEventError:
                pass
    return worst, mutant, skipped


def _quantum_spam(rng, trials, mutate):
    worst = mutant = 0.0
    for k in range(trials):
        d = (2, 4, 6)[k % 3]
        obs = 3 if d == 6 and k % 2 else 2
        spam = random_spam(d, obs, rng)
        worst = max(worst, *spam.invariant_gaps().values())
        if mutate:
            u = spam.u_c.copy()
            u[0, 0, 1] += 1e-3
            mutant = max(mutant, spam_symmetry_gap(QuantumSpamModel(spam.k_o, u, validate=False)))
    return worst, mutant, 0


def _quantum_balance(rng, trials, mutate):
    worst = mutant = 0.0
    for k in range(trials):
        d = (2, 4, 6)[k % 3]
        obs = 3 if d == 6 and k % 2 else 2
        spam = random_spam(d, obs, rng)
        ham = DiagonalHamiltonian(rng.uniform(-2, 2, d), rng.uniform(0.1, 1.0))
        drv = random_kernel(obs, rng)
        beta = rng.uniform(0, 2)
        traj = random_trajectory(int(rng.integers(1, 4)), obs, rng)
        worst = max(worst, quantum_balance_check(traj, ham, spam, drv, beta))
        if mutate:
            u = spam.u_c.copy()
            u[:, 0, :] *= 1.01
            bad = QuantumSpamModel(spam.k_o, u, validate=False)
            traj_m = random_trajectory(3, obs, rng, energy_scale=0.3)
            mutant = max(mutant, quantum_balance_check(traj_m, DiagonalHamiltonian(ham.energy * 0.3, 0.5),
                                                       bad, drv, 1.0))
    return worst, mutant, 0


def _gaussian_identity(rng, trials, mutate):
    worst = mutant = 0.0
    fns = [lambda w: 1.0, np.cos, lambda w: np.exp(-w * w), lambda w: w]
    for k in range(trials):
        e, beta, sigma = rng.uniform(-1, 1), rng.uniform(0, 2), rng.uniform(0.05, 1)
        f = fns[k % len(fns)]
        g = gaussian_identity_check(e, beta, sigma, f)
        worst = max(worst, g.violation)
        if mutate:
            # omit the exp(-beta^2 sigma^2 / 2) prefactor on the right side
            mutant = max(mutant, abs(g.lhs - g.rhs * np.exp((beta * sigma) ** 2 / 2)))
    return worst, mutant, 0


_RUNNERS = {
    "classical_balance": _classical_balance,
    "branch_balance": _branch_balance,
    "acceptance_equivalence": _acceptance_equivalence,
    "quantum_spam": _quantum_spam,
    "quantum_balance": _quantum_balance,
    "gaussian_identity": _gaussian_identity,
}


@dataclass(frozen=True)
class VerifyReport:
    results: list[CheckResult]
    mutation: bool

    @property
    def passed(self) -> bool:
        ok = all(r.passed for r in self.results)
        if self.mutation:
            ok = ok and all(r.mutation_detected for r in self.results)
        return ok

    def to_dict(self) -> dict:
        return {"passed": self.passed, "mutation": self.mutation,
                "checks": [r.to_dict() for r in self.results]}


def verify_suite(checks=ALL_CHECKS, seed: int = 0, trials: dict | None = None,
                 mutation: bool = False) -> VerifyReport:
    """Run the named checks; each gets its own random stream."""
    unknown = [c for c in checks if c not in _RUNNERS]
    if unknown:
        raise ValidationError(f"unknown checks: {unknown}")
    trials = {**DEFAULT_TRIALS, **(trials or {})}
    results = []
    for name in checks:
        rng = make_stream(seed, 0, f"verify:{name}")
        worst, mutant, skipped = _RUNNERS[name](rng, int(trials[name]), mutation)
        results.append(CheckResult(name, float(worst), TOLERANCES[name], int(trials[name]), skipped,
                                   float(mutant) if mutation else None))
    return VerifyReport(results, mutation)


def configured_balance(energy, beta: float, driver) -> CheckResult:
    """Classical balance of one configured model."""
    model = MhModel(energy, beta, driver)
    rep = check_detailed_balance(build_pm_kernel(model), thermal_distribution(energy, beta))
    return CheckResult("configured_classical_balance", max(rep.max_violation, rep.stationarity_l1),
                       TOLERANCES["classical_balance"], 1)
