import numpy as np
import pytest
from scipy import stats

from qmhlab.core import random_kernel
from qmhlab.errors import ValidationError
from qmhlab.imprecise import ImpreciseConfig, ImpreciseModel, Trajectory, exact_kernel, random_trajectory
from qmhlab.quantum import (
    DiagonalHamiltonian,
    QuantumSampler,
    QuantumSpamModel,
    basis_state,
    classical_spam_from_quantum,
    diagonalize,
    estimate_channel,
    is_classical_spam,
    pair_mixing_check,
    qpe_measure,
    quantum_balance_check,
    quantum_observables,
    random_spam,
    spam_symmetry_gap,
    thermal_chain_check,
    trace_distance,
    typical_spam_builder,
)


def test_trace_distance_value():
    plus = np.array([1, 1]) / np.sqrt(2)
    r0 = np.outer(basis_state(2, 0), basis_state(2, 0))
    rp = np.outer(plus, plus)
    assert trace_distance(r0, rp) == pytest.approx(1 / np.sqrt(2), abs=1e-14)


@pytest.mark.parametrize("d,obs", [(2, 2), (4, 2), (6, 3), (6, 2)])
def test_typical_spam_invariants(d, obs, rng):
    spam = random_spam(d, obs, rng)
    assert max(spam.invariant_gaps().values()) < 1e-10


def test_typical_spam_rejects_bad_shapes():
    with pytest.raises(ValidationError):
        typical_spam_builder(np.eye(3), 0, 2)
    with pytest.raises(ValidationError):
        typical_spam_builder(np.ones((2, 2)), 0, 2)
    with pytest.raises(ValidationError):
        typical_spam_builder(np.eye(2), 2, 2)


def test_perturbed_spam_fails_validation(rng):
    spam = random_spam(4, 2, rng)
    u = spam.u_c.copy()
    u[0, 0, 1] += 1e-3
    assert spam_symmetry_gap(QuantumSpamModel(spam.k_o, u, validate=False)) > 1e-6
    with pytest.raises(ValidationError):
        QuantumSpamModel(spam.k_o, u)


def test_identity_basis_spam_is_classical():
    spam = typical_spam_builder(np.eye(2), 0, 2)
    assert is_classical_spam(spam)
    cs = classical_spam_from_quantum(spam)
    assert cs.size == 2 and cs.obs_size == 2
    assert not is_classical_spam(random_spam(4, 2, np.random.default_rng(1)))


def test_quantum_balance_random(rng):
    worst = 0.0
    for k in range(150):
        d = (2, 4, 6)[k % 3]
        spam = random_spam(d, 2, rng)
        ham = DiagonalHamiltonian(rng.uniform(-2, 2, d), rng.uniform(0.1, 1.0))
        traj = random_trajectory(int(rng.integers(1, 4)), 2, rng)
        worst = max(worst, quantum_balance_check(traj, ham, spam, random_kernel(2, rng), rng.uniform(0, 2)))
    assert worst < 1e-10


def test_literal_shifted_gaussian_form_does_not_balance_pointwise():
    # shifting the Gaussian of the oldest energy only balances after integration
    spam = typical_spam_builder(np.eye(2), 0, 2)
    ham = DiagonalHamiltonian([0.0, 1.0], 0.5)
    traj = Trajectory([0, 1, 0], [0.2, 0.9, 0.1])
    drv = np.full((2, 2), 0.5)
    assert quantum_balance_check(traj, ham, spam, drv, 1.0) < 1e-12
    assert quantum_balance_check(traj, ham, spam, drv, 1.0, literal=True) > 1e-3


def test_qpe_statistics():
    ham = DiagonalHamiltonian([0.0, 2.0], 0.3)
    rng = np.random.default_rng(5)
    psi = np.array([np.sqrt(0.25), np.sqrt(0.75)], dtype=complex)
    ws, outs = [], []
    for _ in range(4000):
        w, out = qpe_measure(psi, ham, rng)
        ws.append(w)
        outs.append(np.abs(out) ** 2)
    ws = np.array(ws)
    assert abs(ws.mean() - 1.5) < 5 * ws.std() / np.sqrt(ws.size)
    np.testing.assert_allclose(np.sum(outs, axis=1), 1.0, atol=1e-12)


def test_observables_two_level_idle():
    ham = DiagonalHamiltonian([0.0, np.log(2.0)], 0.2)
    ob = quantum_observables(ham, QuantumSpamModel.idle(2), 1.0, float)
    assert ob.mu_omega == pytest.approx(np.log(2.0) / 3, abs=1e-14)
    assert ob.mu_f == 0.0
    assert ob.var_omega == pytest.approx(ob.var_omega0 + 0.04)


def test_diagonalize_rotates_spam():
    h = np.array([[0.0, 0.5], [0.5, 1.0]])
    spam = random_spam(2, 2, np.random.default_rng(2))
    ham, rot, v = diagonalize(h, 0.3, spam)
    np.testing.assert_allclose(ham.energy, np.linalg.eigvalsh(h), atol=1e-14)
    assert max(rot.invariant_gaps().values()) < 1e-10
    with pytest.raises(ValidationError):
        diagonalize(np.array([[0.0, 1.0], [0.0, 0.0]]), 0.3)


def test_classical_spam_reduces_to_quadrature_joint_law():
    spam = typical_spam_builder(np.eye(2), 0, 2)
    e = np.array([0.0, 0.8])
    cfg = ImpreciseConfig(0.4, 2, np.full((2, 2), 0.5), 1.0)
    ex = exact_kernel(ImpreciseModel(e, classical_spam_from_quantum(spam)), cfg)
    sampler = QuantumSampler(DiagonalHamiltonian(e, 0.4), spam, cfg)
    rng = np.random.default_rng(9)
    a0 = 1
    keys = sorted(ex.joint[a0])
    counts = dict.fromkeys(keys, 0)
    runs = 20000
    for _ in range(runs):
        rec, _ = sampler.step(basis_state(2, a0), rng)
        counts[(rec.halted_at, tuple(int(o) for o in rec.trajectory.obs))] += 1
    obs = np.array([counts[k] for k in keys])
    exp = np.array([ex.joint[a0][k] for k in keys])
    keep = exp * runs > 5
    assert stats.chisquare(obs[keep], exp[keep] / exp[keep].sum() * obs[keep].sum()).pvalue > 1e-3


def test_thermal_chain_small_instance():
    ham = DiagonalHamiltonian([0.0, 0.7], 0.2)
    spam = typical_spam_builder(np.eye(2), 0, 2)
    cfg = ImpreciseConfig(0.2, 200, np.full((2, 2), 0.5), 1.0)
    rep = thermal_chain_check(ham, spam, cfg, 8000, 200, np.random.default_rng(3))
    assert abs(rep.z_omega) < 4.5 and abs(rep.z_f) < 4.5


def test_channel_estimate_is_physical():
    ham = DiagonalHamiltonian([0.0, 0.7], 0.3)
    spam = typical_spam_builder(np.eye(2), 0, 2)
    cfg = ImpreciseConfig(0.3, 3, np.full((2, 2), 0.5), 1.0)
    rng = np.random.default_rng(4)
    ch = estimate_channel(ham, spam, cfg, 400, rng)
    assert 0.0 <= ch.eps_max() <= 1.0
    assert 0.0 <= ch.retention_estimate(rng, probes=20) <= 1.0
    out = ch.apply(np.eye(2) / 2)
    assert np.trace(out).real == pytest.approx(1.0, abs=1e-10)


def test_pair_mixing_decreases():
    ham = DiagonalHamiltonian([0.0, 0.7], 0.2)
    spam = typical_spam_builder(np.eye(2), 0, 2)
    cfg = ImpreciseConfig(0.2, 50, np.full((2, 2), 0.5), 1.0)
    rep = pair_mixing_check(ham, spam, cfg, 3, 400, np.random.default_rng(6))
    assert rep.distances[0] == pytest.approx(rep.initial_exact, abs=1e-12)
    assert rep.nonincreasing_within(4.0)


def test_sampler_rejects_mismatched_inputs():
    with pytest.raises(ValidationError):
        QuantumSampler(DiagonalHamiltonian([0.0, 1.0, 2.0], 0.2), QuantumSpamModel.idle(2),
                       ImpreciseConfig(0.2, 3, np.ones((1, 1)), 1.0))
