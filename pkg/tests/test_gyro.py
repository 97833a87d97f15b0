"""Gyrovector operations: hyperbolic matrix action and SPD gyro-addition."""

import numpy as np
import pytest

from riemres import autodiff as ad
from riemres import gyro
from riemres.errors import DomainError, SingularMatrixError


def test_hyp_matvec_identity_fixes_points():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.uniform(-0.4, 0.4, size=3)
        x = x / max(1.0, 2.0 * np.sqrt((x * x).sum()))
        out = gyro.hyp_matvec(np.eye(3), x)
        assert np.abs(out - x).max() < 1e-12


def test_hyp_matvec_scaling_closed_form():
    # M = 2I on (0.5, 0): tanh(2 atanh(0.5)) = 0.8 along the same ray
    out = gyro.hyp_matvec(2.0 * np.eye(2), np.array([0.5, 0.0]))
    assert np.allclose(out, [0.8, 0.0], atol=1e-12)


def test_hyp_matvec_zero_conventions():
    out = gyro.hyp_matvec(np.zeros((2, 2)), np.array([0.3, -0.2]))
    assert np.abs(out).max() == 0.0
    out = gyro.hyp_matvec(np.eye(2), np.zeros(2))
    assert np.abs(out).max() == 0.0


def test_hyp_matvec_composition_collapses():
    # (MN) applied once equals M after N: stacked gyro-linear layers are
    # one layer in disguise
    rng = np.random.default_rng(1)
    for _ in range(1000):
        m = rng.normal(size=(2, 2))
        n = rng.normal(size=(2, 2))
        x = rng.uniform(-0.6, 0.6, size=2)
        if np.sqrt((x * x).sum()) >= 0.9:
            continue
        a = gyro.hyp_matvec(m @ n, x)
        b = gyro.hyp_matvec(m, gyro.hyp_matvec(n, x))
        assert np.abs(a - b).max() < 1e-10


def test_hyp_matvec_stays_in_open_ball():
    rng = np.random.default_rng(2)
    for _ in range(200):
        m = rng.normal(size=(3, 3)) * 5.0
        x = rng.uniform(-0.5, 0.5, size=3)
        x = x / max(1.0, 1.2 * np.sqrt((x * x).sum()))
        out = gyro.hyp_matvec(m, x)
        assert (out * out).sum() < 1.0


def test_hyp_matvec_rejects_boundary_input():
    with pytest.raises(DomainError):
        gyro.hyp_matvec(np.eye(2), np.array([1.0, 0.0]))


def test_spd_gyro_add_identity_laws():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 3))
    y = a @ a.T + np.eye(3)
    assert np.abs(gyro.spd_gyro_add(np.eye(3), y) - y).max() < 1e-10
    assert np.abs(gyro.spd_gyro_add(y, np.eye(3)) - y).max() < 1e-10


def test_spd_gyro_add_diagonal_closed_forms():
    out = gyro.spd_gyro_add(np.diag([4.0, 1.0]), np.eye(2))
    assert np.abs(out - np.diag([4.0, 1.0])).max() < 1e-10
    out = gyro.spd_gyro_add(np.diag([4.0, 9.0]), np.diag([2.0, 3.0]))
    assert np.abs(out - np.diag([8.0, 27.0])).max() < 1e-10


def test_spd_gyro_add_output_is_spd():
    rng = np.random.default_rng(4)
    for _ in range(200):
        a = rng.normal(size=(4, 4))
        b = rng.normal(size=(4, 4))
        x = a @ a.T + 0.1 * np.eye(4)
        y = b @ b.T + 0.1 * np.eye(4)
        out = gyro.spd_gyro_add(x[None], y[None])[0]
        assert np.abs(out - out.T).max() < 1e-10
        assert np.linalg.eigvalsh(out).min() > 0


def test_spd_gyro_add_differentiates():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(2, 2))
    x = a @ a.T + np.eye(2)
    v = ad.Parameter(np.array([[0.1, 0.05], [0.05, -0.2]]), name="v")

    def build():
        sym = (v + ad.mT(v)) * 0.5
        return ad.sum_(gyro.spd_gyro_add(ad.lift(x) + sym, ad.lift(np.eye(2))) ** 2)

    with ad.Tape() as tape:
        loss = build()
    g = tape.gradients(loss)[v]
    fd = ad.finite_diff_grad(lambda: float(ad.value_of(build())), [v])[v]
    assert np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-8) < 1e-5


def test_spd_gyro_add_rejects_indefinite_input():
    with pytest.raises(SingularMatrixError):
        gyro.spd_gyro_add(np.diag([1.0, -1.0]), np.eye(2))
