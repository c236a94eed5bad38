import math

import numpy as np
import pytest

from jacksontree.network import PerNodeBuffer, SharedBuffer, TreeNetwork, random_tree
from jacksontree.subsolution import GradientTable, MollifierParams, build_gradient_table, choose_params
from jacksontree.verification import (
    CheckFailed,
    check_effective_gradient_supersolution,
    check_epsilon_subsolution_definition,
    check_simple_gradient_roots,
    check_subsolution,
    exit_samples,
    fd_hessian,
    interior_samples,
    run_all,
)


def test_roots_ex1(ex1):
    r = check_simple_gradient_roots(ex1.network)
    assert r.passed and r.worst < 1e-12


def test_roots_single_node():
    net = TreeNetwork.from_rates(.3, {(1, 0): .7})
    assert check_simple_gradient_roots(net).worst < 1e-15


def test_roots_negative_control(ex1):
    with pytest.raises(CheckFailed) as info:
        check_simple_gradient_roots(ex1.network, perturb=[.01, 0, 0, 0])
    assert info.value.report.witness is not None


def test_supersolution(ex1, ex2):
    assert check_effective_gradient_supersolution(ex1.network).passed
    assert check_effective_gradient_supersolution(ex2.network).passed
    with pytest.raises(CheckFailed):
        check_effective_gradient_supersolution(ex1.network, scale=1.2)


def test_subsolution_ex1(ex1):
    p = MollifierParams(.25, .08, math.log(6))
    r = check_subsolution(ex1.network, ex1.buffer, p, sample_count=10_000)
    assert r.passed
    assert r.details["C1_measured"] <= r.details["C1_bound"]
    assert abs(r.details["W0"] - r.details["W0_closed_form"]) < 1e-10


def test_subsolution_hessian_scaling(ex1):
    # C2 is stable under halving delta, so the raw Hessian bound roughly doubles
    p = MollifierParams(.25, .08, math.log(6))
    c2 = check_subsolution(ex1.network, ex1.buffer, p, sample_count=500).details["C2_measured"]
    vals = [c2[d] / d for d in sorted(c2, reverse=True)]
    for a, b in zip(vals, vals[1:]):
        assert 1.6 < b / a < 2.4


def test_subsolution_per_node_faces(five):
    p = MollifierParams(.3, .1, 0.0)
    p = choose_params(five.network, five.buffer, epsilon=.3, delta=.1)
    r = check_subsolution(five.network, five.buffer, p, sample_count=5000)
    assert r.passed and r.details["max_W_on_exit"] <= 0
    S = exit_samples(five.buffer, 5, 100)
    beta = five.buffer.beta_float
    on_face = np.isclose(S, beta[None, :]).any(axis=1)
    assert on_face.all()
    assert {int(np.argmax(np.isclose(s, beta))) for s in S[:100]} == set(range(5))


def test_subsolution_gamma_control(ex1):
    p = MollifierParams(.25, .08, math.log(6))
    with pytest.raises(CheckFailed) as info:
        check_subsolution(ex1.network, ex1.buffer, p, sample_count=1000, gamma=1.5 * math.log(6))
    assert "3" in info.value.report.details["failed_items"]


def test_epsilon_definition_shrinks(ex1):
    ps = [choose_params(ex1.network, ex1.buffer, n) for n in (30, 60, 120)]
    r = check_epsilon_subsolution_definition(ex1.network, ex1.buffer, ps)
    effs = [row["eps_eff"] for row in r.details["rows"]]
    assert effs[0] > effs[1] > effs[2]


def test_epsilon_definition_single_piece():
    # one piece with the all-nonempty gradient q = 2 log rho: every clause has a closed form
    net = TreeNetwork.from_rates(.3, {(1, 0): .7})
    t = GradientTable(np.array([[2 * math.log(3 / 7)]]), np.array([1]))
    p = MollifierParams(.2, .05, math.log(7 / 3))
    r = check_epsilon_subsolution_definition(net, SharedBuffer(10), p, table=t, strict=False)
    row = r.details["rows"][0]
    # on the empty boundary N = 0.3 * 7/3 + 0.7 = 1.4
    assert row["a"] == pytest.approx(2 * math.log(1.4), rel=1e-12, abs=0)
    assert row["b"] == pytest.approx(.2, rel=1e-12, abs=0)
    assert row["c"] == 0.0


def test_shared_vs_unit_beta(ex1):
    p = MollifierParams(.25, .08, math.log(6))
    unit = PerNodeBuffer(30, (1, 1, 1, 1))
    a = check_subsolution(ex1.network, ex1.buffer, p, sample_count=500)
    b = check_subsolution(ex1.network, unit, p, sample_count=500)
    for key in ("C1_measured", "W0", "C2_measured"):
        assert a.details[key] == b.details[key]


def test_samples_cover_faces():
    X = interior_samples(3, 16)
    assert (X[0] == 0).all()
    assert (X[7] > 0).all()
    assert (X[5][[0, 2]] > 0).all() and X[5][1] == 0


def test_fd_hessian_quadratic():
    A = np.array([[2.0, .5], [.5, 1.0]])
    H = fd_hessian(lambda x: 0.5 * x @ A @ x, np.array([.3, -.2]), 1e-3)
    np.testing.assert_allclose(H, A, atol=1e-6)


def test_reference_networks_all_pass(ex1, ex2, five):
    for cfg in (ex1, ex2, five):
        p = choose_params(cfg.network, cfg.buffer, epsilon=cfg.extras["defaults"]["epsilon"],
                          delta=cfg.extras["defaults"]["delta"])
        reports = run_all(cfg.network, cfg.buffer, p, sample_count=2000)
        assert all(r.passed for r in reports), [r.line() for r in reports]


def test_reports_deterministic(ex1):
    p = MollifierParams(.25, .08, math.log(6))
    a = [r.to_json() for r in run_all(ex1.network, ex1.buffer, p, 500, seed=4)]
    b = [r.to_json() for r in run_all(ex1.network, ex1.buffer, p, 500, seed=4)]
    assert a == b
