import numpy as np
import pytest

from relaxrk.errors import NotFound
from relaxrk.tableaux import ButcherTableau, Mrk2ZoneTableaux, available, builtin_tableau, validate


def test_every_builtin_has_unit_weight_sum():
    for name in available():
        t = builtin_tableau(name)
        if isinstance(t, Mrk2ZoneTableaux):
            parts = [t.fast, t.slow_buffer, t.slow, t.root_level]
        elif isinstance(t, ButcherTableau):
            parts = [t]
        else:
            parts = [t.explicit_part, t.implicit_part]
        for p in parts:
            assert abs(p.b.sum() - 1.0) <= 1e-14, (name, p.name)
            assert np.allclose(p.A.sum(axis=1), p.c, atol=1e-14, rtol=0)


def test_multirate_zone_weights():
    t = builtin_tableau("mrk2")
    assert np.array_equal(t.fast.b, [0.25] * 4)
    assert np.array_equal(t.slow.b, [0.5, 0.0, 0.0, 0.5])
    assert np.array_equal(t.slow_buffer.b, [0.25] * 4)
    assert t.root_level.name == "rk2_ssp"
    assert validate(t.fast) == []


def test_rk2_ssp_coefficients():
    t = builtin_tableau("rk2_ssp")
    assert np.array_equal(t.A, [[0, 0], [1, 0]])
    assert np.array_equal(t.b, [0.5, 0.5])


def test_imex_pairs_have_equal_weights():
    for name in ("ark2", "ark3"):
        pair = builtin_tableau(name)
        assert pair.weights_equal
        assert pair.explicit_part.is_explicit
        assert pair.implicit_part.is_diagonally_implicit


def test_unknown_scheme():
    with pytest.raises(NotFound):
        builtin_tableau("rk9")


def test_validate_reports_row_sum_mismatch():
    bad = ButcherTableau([[0, 0], [0.25, 0]], [0.5, 0.5], [0, 0.5])
    assert validate(bad) == ["row-sum mismatch at stage 2"]
    euler = ButcherTableau([[0.0]], [1.0], [0.0])
    assert validate(euler) == []


@pytest.mark.parametrize("z", [-0.7, 0.3, -2.1 + 0.5j])
def test_fast_tableau_is_two_ssp_half_steps(z):
    # on q' = lam q the four-stage fast tableau over H equals two SSP-RK2 steps of H/2
    fast = builtin_tableau("mrk2").fast
    s = fast.s
    stability = 1 + z * fast.b @ np.linalg.solve(np.eye(s) - z * fast.A, np.ones(s))
    half = z / 2
    assert abs(stability - (1 + half + half**2 / 2) ** 2) <= 1e-14


def test_slow_tableau_is_one_ssp_step():
    slow = builtin_tableau("mrk2").slow
    for z in (-0.4, 0.9):
        amp = 1 + z * slow.b @ np.linalg.solve(np.eye(4) - z * slow.A, np.ones(4))
        assert abs(amp - (1 + z + z * z / 2)) <= 1e-14
