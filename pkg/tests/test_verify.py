import numpy as np

from qmhlab.verify import ALL_CHECKS, configured_balance, verify_suite


def test_default_suite_passes():
    rep = verify_suite(seed=3, trials={"branch_balance": 300, "acceptance_equivalence": 300,
                                       "quantum_balance": 60})
    assert rep.passed, rep.to_dict()
    assert [r.name for r in rep.results] == list(ALL_CHECKS)


def test_mutations_are_detected():
    rep = verify_suite(seed=4, mutation=True, trials={name: 30 for name in ALL_CHECKS})
    assert all(r.mutation_detected for r in rep.results), rep.to_dict()
    assert rep.passed


def test_empty_suite():
    rep = verify_suite([], seed=0)
    assert rep.passed and rep.results == []


def test_configured_balance_two_state():
    res = configured_balance([0.0, np.log(2.0)], 1.0, np.full((2, 2), 0.5))
    assert res.passed and res.max_violation < 1e-15


def test_report_is_json_ready():
    import json
    json.dumps(verify_suite(["gaussian_identity"], seed=1, trials={"gaussian_identity": 4}).to_dict())
