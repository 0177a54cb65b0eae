import numpy as np
import pytest

from rbsde.errors import ValidationError
from rbsde.generators import (Affine, Logistic, Power, Tabulated, check_monotone, fnm_ladder,
                              from_spec, moreau_approx, truncate)


def hinge():
    """f(y) = max(-2y, 0)."""
    return Tabulated([-1.0, 0.0, 1.0], [2.0, 0.0, 0.0])


def test_moreau_hinge_values():
    g = moreau_approx(hinge(), 1)
    assert g(0.0, np.array(-1.0)) == pytest.approx(1.0, abs=1e-9)
    assert g(0.0, np.array(1.0)) == pytest.approx(0.0, abs=1e-12)


def test_moreau_of_lipschitz_is_identity():
    f = Logistic(0.2, 1.0, 2.0, 0.0)
    ys = np.linspace(-5, 5, 41)
    assert np.allclose(moreau_approx(f, 1)(0.0, ys), f(0.0, ys))


def test_moreau_needs_lower_bound():
    with pytest.raises(ValidationError, match="requires declared lower bound"):
        moreau_approx(Affine(0, 1), 2)


def test_moreau_increases_to_f():
    f = Logistic(0.0, 2.0, 40.0, 0.3)  # Lipschitz 20
    ys = np.linspace(-2, 2, 401)
    prev = None
    for n in (1, 2, 4, 8, 16, 32):
        g = moreau_approx(f, n)(0.0, ys)
        assert np.all(g <= f(0.0, ys) + 1e-12)
        assert np.max(np.diff(g)) <= 1e-12  # stays nonincreasing
        if prev is not None:
            assert np.all(prev <= g + 1e-12)
        prev = g
    assert np.allclose(prev, f(0.0, ys))


def test_moreau_matches_brute_force():
    f = truncate(Power(0.0, 1.0, 2.0), 3.0, lambda t: 1.0)
    g = moreau_approx(f, 2)
    ys = np.linspace(-3, 3, 25)
    xs = np.linspace(-10, 10, 200001)
    brute = np.array([np.min(f(0.0, xs) + 2 * np.abs(y - xs)) for y in ys])
    # the grid misses the kink at sqrt(3) by < 1e-4; phi has slope <= 4 there
    assert np.allclose(g(0.0, ys), brute, atol=4e-4)
    assert np.all(g(0.0, ys) <= brute + 1e-12)


def test_fnm_formula():
    f = Power(0.0, 1.0, 2.0)  # -y|y|; at y = 3 it is -9
    g = fnm_ladder(f, 4, 4, rho=lambda t: 1e12)
    assert g(0.0, np.array(3.0)) == pytest.approx(-4.0, rel=1e-9)


def test_fnm_monotone_in_n_and_m():
    f = Affine(0.5, 1.0)
    ys = np.linspace(-20, 20, 81)
    vals = {(n, m): fnm_ladder(f, n, m)(0.3, ys) for n in (1, 2, 4, 8) for m in (1, 2, 4, 8)}
    for n in (1, 2, 4):
        for m in (1, 2, 4, 8):
            # the weight rises with n; where f < 0 this can push f_{n,m} down
            pos = f(0.3, ys) >= 0
            assert np.all((vals[(n, m)] <= vals[(2 * n, m)] + 1e-15)[pos])
    for n in (1, 2, 4, 8):
        for m in (1, 2, 4):
            assert np.all(vals[(n, 2 * m)] <= vals[(n, m)] + 1e-15)


def test_from_spec_and_spec_roundtrip():
    for f in (Affine(0.1, 2.0), Power(0.0, 0.3, 1.5), Logistic(0.0, 1.0, 2.0, 0.5), hinge()):
        g = from_spec(f.spec())
        ys = np.linspace(-3, 3, 13)
        assert np.array_equal(g(0.0, ys), f(0.0, ys))


def test_rejects_increasing():
    with pytest.raises(ValidationError):
        Affine(0, -1)
    with pytest.raises(ValidationError):
        Tabulated([0.0, 1.0], [0.0, 1.0])
    with pytest.raises(ValidationError):
        from_spec({"family": "quadratic"})
    assert check_monotone(Power(0, 1, 3), [0.0])
