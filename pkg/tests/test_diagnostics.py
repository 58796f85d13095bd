import numpy as np
import pytest

from qmhlab.diagnostics import (
    CostModelInputs,
    coarse_retention_from_trace,
    diagnostics_report,
    empirical_n_mix,
    epsilon_max_estimate,
    error_bounds_from_records,
    evolution_time_limit,
    group_truncations,
    n_mix_bound,
    sigma_opt,
    t_mix,
    t_mix_minimized,
    wilson_upper,
)
from qmhlab.errors import ValidationError
from qmhlab.halting import cost_accuracy_model
from qmhlab.imprecise import (
    ClassicalSpamModel,
    ImpreciseConfig,
    ImpreciseModel,
    ImpreciseSampler,
    Trajectory,
    UpdateRecord,
)


def test_n_mix_bound_value():
    assert n_mix_bound(1 / 3) == pytest.approx(2.0)
    with pytest.raises(ValidationError):
        n_mix_bound(1.0)


def test_sigma_opt_values():
    s, t = sigma_opt(1.0, 1e-3)
    assert s == pytest.approx(0.2690, abs=5e-5)
    assert t == pytest.approx(6.908, abs=5e-4)
    assert evolution_time_limit(s, 1e-3) == pytest.approx(t, rel=1e-12)


def test_t_mix_minimized_matches_grid_minimum():
    beta, eps, omega = 1.3, 1e-4, 0.4
    grid = np.linspace(0.05, 2.0, 4000)
    vals = [t_mix(CostModelInputs(omega, eps, beta, s)) for s in grid]
    assert min(vals) == pytest.approx(t_mix_minimized(beta, eps, omega), rel=1e-5)
    s_best, _ = sigma_opt(beta, eps)
    assert grid[int(np.argmin(vals))] == pytest.approx(s_best, abs=1e-3)


def test_halting_cost_model_value():
    assert cost_accuracy_model(1.0, 0.3, 1e-4).n_halt_from_eps == pytest.approx(3.62400, abs=1e-5)


def test_empirical_n_mix_ar1():
    rng = np.random.default_rng(0)
    phi = 0.5
    x = np.zeros(200000)
    noise = rng.normal(size=x.size)
    for t in range(1, x.size):
        x[t] = phi * x[t - 1] + noise[t]
    assert empirical_n_mix(x) == pytest.approx((1 + phi) / (1 - phi), rel=0.1)


def test_coarse_retention_from_known_chain():
    rng = np.random.default_rng(1)
    k = np.array([[0.9, 0.1], [0.3, 0.7]])
    s = [0]
    for _ in range(50000):
        s.append(int(rng.random() < k[s[-1], 1]))
    rep = coarse_retention_from_trace(s, 2)
    assert rep.omega_bar == pytest.approx(0.6, abs=0.02)


def test_coarse_retention_warns_on_missing_class():
    with pytest.warns(UserWarning):
        rep = coarse_retention_from_trace([0, 1] * 600, 3)
    assert rep.observed.tolist() == [0, 1]
    with pytest.raises(ValidationError):
        coarse_retention_from_trace([0, 1], 2)


def test_wilson_upper_closed_form():
    k, n, z = 3, 50, 1.959963984540054
    ph = k / n
    centre = (ph + z * z / (2 * n)) / (1 + z * z / n)
    half = z / (1 + z * z / n) * np.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n))
    assert wilson_upper(k, n) == pytest.approx(centre + half, rel=1e-9)


def test_epsilon_max_picks_largest_group():
    est = epsilon_max_estimate({"a": (1, 100), "b": (5, 100), "c": (0, 0)})
    assert est.group == "b" and est.value == 0.05 and est.groups == 2
    assert est.upper > 0.05


def _records(sigma=0.3, n_max=3, steps=3000):
    model = ImpreciseModel(np.array([0.0, 0.5, 1.0]), ClassicalSpamModel.direct(3))
    cfg = ImpreciseConfig(sigma, n_max, np.full((3, 3), 1 / 3), 1.0)
    return ImpreciseSampler(model, cfg).run(0, steps, np.random.default_rng(7))


def test_error_bounds_from_records():
    recs = _records()
    est = error_bounds_from_records(recs, 3)
    assert 0 < est.eps_tilde < 1
    assert est.eps_max >= est.eps_tilde - 0.05
    assert "biased-coarse-grained-estimates" in est.flags
    groups = group_truncations(recs)
    assert sum(n for _, n in groups.values()) == len(recs) - 1


def test_vacuous_bound_is_flagged():
    # a sticky observation trace (retention near one) plus frequent truncation
    obs1 = [0] * 600 + [1] * 600
    recs = [UpdateRecord(Trajectory([0, o], [0.0, float(k % 3)]), None, 1, k % 5 == 0)
            for k, o in enumerate(obs1)]
    rep = diagnostics_report(recs, 2, 1.0, 0.3)
    assert "bound-vacuous" in rep["flags"]
    assert rep["distance_bound"]["value"] == float("inf")


def test_report_tags_model_and_measured():
    rep = diagnostics_report(_records(), 3, 1.0, 0.3)
    assert rep["t_mix"]["kind"] == "model"
    assert rep["omega_bar"]["kind"] == "measured"
