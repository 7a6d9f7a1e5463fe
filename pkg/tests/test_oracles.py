"""The reference oracles are checked against closed forms and HiGHS first."""

import numpy as np
import pytest
from scipy.optimize import linprog

from oracles import (
    delta_by_inverse,
    equicorr_inverse,
    l1_vertex_oracle,
    normal_sf,
    random_spd,
    soft_threshold,
)


def highs_l1(S, d, lam):
    p = d.size
    # variables (b, u): min sum u, -u <= b <= u, |S b - d| <= lam
    c = np.r_[np.zeros(p), np.ones(p)]
    eye = np.eye(p)
    z = np.zeros((p, p))
    A = np.block([[eye, -eye], [-eye, -eye], [S, z], [-S, z]])
    b = np.r_[np.zeros(2 * p), d + lam, lam - d]
    res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * p + [(0, None)] * p, method="highs")
    assert res.status == 0
    return res.fun


def test_vertex_oracle_matches_soft_threshold_on_identity():
    d = np.array([3.0, -1.0, 0.2])
    val, b = l1_vertex_oracle(np.eye(3), d, 0.5)
    np.testing.assert_allclose(b, [2.5, -0.5, 0.0], atol=1e-12)
    assert val == pytest.approx(3.0)


def test_vertex_oracle_agrees_with_highs():
    rng = np.random.default_rng(11)
    for _ in range(40):
        p = int(rng.integers(1, 6))
        S = random_spd(rng, p)
        d = rng.standard_normal(p)
        lam = rng.choice([0.1, 0.3, 0.7]) * np.abs(d).max()
        val, _ = l1_vertex_oracle(S, d, lam)
        assert val == pytest.approx(highs_l1(S, d, lam), abs=1e-7)


def test_vertex_oracle_lambda_zero_is_solve():
    rng = np.random.default_rng(2)
    S = random_spd(rng, 4)
    d = rng.standard_normal(4)
    val, b = l1_vertex_oracle(S, d, 0.0)
    np.testing.assert_allclose(b, np.linalg.solve(S, d), atol=1e-9)


def test_soft_threshold_values():
    np.testing.assert_allclose(soft_threshold([3, -1, 0.2], 0.5), [2.5, -0.5, 0.0])


def test_equicorr_inverse_closed_form():
    m = np.full((4, 4), 0.5) + 0.5 * np.eye(4)
    np.testing.assert_allclose(equicorr_inverse(4, 0.5) @ m, np.eye(4), atol=1e-14)


def test_delta_by_inverse_identity():
    assert delta_by_inverse(np.eye(3), [0.5, 0, 0]) == pytest.approx(0.25)


def test_normal_sf_table_value():
    assert normal_sf(1.0) == pytest.approx(0.15865525393145707, abs=1e-15)
