"""Backend parity: the jitted kernels must match the numpy reference."""

import numpy as np
import pytest

from portwin.kernels import numpy_backend as ref

nb = pytest.importorskip("portwin.kernels.numba_backend")

NX, NY, NZ = 6, 5, 4
GS = (NX + 2, NY + 2, NZ + 2)


@pytest.fixture(scope="module")
def fields():
    rng = np.random.default_rng(7)
    return {
        "p": rng.normal(size=GS),
        "ux": rng.normal(size=GS),
        "uy": rng.normal(size=GS),
        "uz": rng.normal(size=GS),
        "hn": rng.normal(size=GS),
        "hp": rng.normal(size=GS),
        "rhs": rng.normal(size=(NX, NY, NZ)),
        "ax": rng.uniform(0.5, 2.0, size=(NX + 1, NY, NZ)),
        "ay": rng.uniform(0.5, 2.0, size=(NX, NY + 1, NZ)),
        "az": rng.uniform(0.5, 2.0, size=(NX, NY, NZ + 1)),
        "diag": rng.uniform(1.0, 3.0, size=(NX, NY, NZ)),
        "fluid": (rng.uniform(size=(NX, NY, NZ)) > 0.3).astype(np.uint8),
        "mask": (rng.uniform(size=GS) > 0.4).astype(np.uint8),
    }


def test_jacobi_sweep_parity(fields):
    o1, o2 = np.zeros(GS), np.zeros(GS)
    args = (fields["p"], fields["rhs"], fields["ax"], fields["ay"], fields["az"],
            fields["diag"], fields["fluid"], 0.8)
    ref.jacobi_sweep(*args, o1)
    nb.jacobi_sweep(*args, o2)
    np.testing.assert_array_equal(o1, o2)


def test_residual_parity(fields):
    o1, o2 = np.zeros((NX, NY, NZ)), np.zeros((NX, NY, NZ))
    args = (fields["p"], fields["rhs"], fields["ax"], fields["ay"], fields["az"],
            fields["fluid"])
    ref.residual(*args, o1)
    nb.residual(*args, o2)
    np.testing.assert_array_equal(o1, o2)


def test_divergence_parity(fields):
    o1, o2 = np.zeros((NX, NY, NZ)), np.zeros((NX, NY, NZ))
    args = (fields["ux"], fields["uy"], fields["uz"], fields["fluid"], 0.1, 0.2, 0.3)
    ref.divergence(*args, o1)
    nb.divergence(*args, o2)
    np.testing.assert_array_equal(o1, o2)


@pytest.mark.parametrize("name", ["explicit_x", "explicit_y", "explicit_z"])
@pytest.mark.parametrize("conv", [1.0, 0.0])
def test_explicit_term_parity(fields, name, conv):
    o1, o2 = np.zeros(GS), np.zeros(GS)
    args = (fields["ux"], fields["uy"], fields["uz"], 0.1, 0.2, 0.3, 1e-3, 0.5, conv)
    getattr(ref, name)(*args, o1)
    getattr(nb, name)(*args, o2)
    np.testing.assert_allclose(o1, o2, rtol=0, atol=1e-15)


@pytest.mark.parametrize("first", [True, False])
def test_predictor_parity(fields, first):
    o1, o2 = np.zeros(GS), np.zeros(GS)
    args = (fields["ux"], fields["hn"], fields["hp"], 0.01, fields["mask"], first)
    ref.predictor(*args, o1)
    nb.predictor(*args, o2)
    np.testing.assert_array_equal(o1, o2)


@pytest.mark.parametrize("name,d", [("correct_x", 0.1), ("correct_y", 0.2), ("correct_z", 0.3)])
def test_correct_parity(fields, name, d):
    a1 = fields["ux"].copy()
    a2 = fields["ux"].copy()
    getattr(ref, name)(a1, fields["p"], fields["mask"], 0.02, d)
    getattr(nb, name)(a2, fields["p"], fields["mask"], 0.02, d)
    np.testing.assert_array_equal(a1, a2)


def test_cell_restriction_parity():
    rng = np.random.default_rng(3)
    fine = rng.normal(size=(10, 8, 6))
    for r in ((2, 2, 2), (4, 2, 2)):
        shape = tuple(n // f for n, f in zip((8, 6, 4), r))
        c1, c2 = np.zeros(shape), np.zeros(shape)
        ref.restrict_cell(fine, *r, c1)
        nb.restrict_cell(fine, *r, c2)
        np.testing.assert_allclose(c1, c2, rtol=0, atol=1e-15)


def test_injection_parity():
    rng = np.random.default_rng(4)
    coarse = rng.normal(size=(4, 3, 2))
    f1, f2 = np.zeros((10, 8, 6)), np.zeros((10, 8, 6))
    ref.inject_cell(coarse, 2, 2, 2, f1)
    nb.inject_cell(coarse, 2, 2, 2, f2)
    np.testing.assert_array_equal(f1, f2)

    fluid = (rng.uniform(size=(8, 6, 4)) > 0.3).astype(np.uint8)
    g1 = rng.normal(size=(10, 8, 6))
    g2 = g1.copy()
    ref.inject_add_cell(coarse, 2, 2, 2, fluid, g1)
    nb.inject_add_cell(coarse, 2, 2, 2, fluid, g2)
    np.testing.assert_array_equal(g1, g2)


def test_face_restriction_parity():
    rng = np.random.default_rng(5)
    fu = rng.normal(size=(10, 8, 6))
    for fn, shape in (
        ("restrict_face_x", (5, 3, 2)),
        ("restrict_face_y", (4, 4, 2)),
        ("restrict_face_z", (4, 3, 3)),
    ):
        o1, o2 = np.zeros(shape), np.zeros(shape)
        getattr(ref, fn)(fu, 2, 2, 2, o1)
        getattr(nb, fn)(fu, 2, 2, 2, o2)
        np.testing.assert_allclose(o1, o2, rtol=0, atol=1e-15)


def test_voxelize_parity():
    spheres = np.array([[0.31, 0.42, 0.2, 0.17], [0.8, 0.1, 0.55, 0.23]])
    f1 = np.zeros((16, 12, 10), np.uint8)
    f2 = np.zeros_like(f1)
    ref.voxelize_flags(0.0, 0.0, 0.0, 1 / 16, 1 / 12, 1 / 10, spheres, f1)
    nb.voxelize_flags(0.0, 0.0, 0.0, 1 / 16, 1 / 12, 1 / 10, spheres, f2)
    assert f1.sum() > 0
    np.testing.assert_array_equal(f1, f2)


def test_backend_flag_selects_numpy(monkeypatch):
    import importlib
    import portwin.kernels as K

    monkeypatch.setenv("PORTWIN_NUMBA", "0")
    mod = importlib.reload(K)
    assert mod.BACKEND == "numpy"
    monkeypatch.delenv("PORTWIN_NUMBA")
    mod = importlib.reload(K)
    assert mod.BACKEND in ("numba", "numpy")
