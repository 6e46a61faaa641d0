import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgawave.decompose import (
    BranchSplitError,
    EmptyMeshError,
    MeshSpec,
    MeshWarning,
    TruncationWarning,
    build_phase_mesh,
    init_atoms,
    split_branches,
    window_transform,
)
from fgawave.kernels import window_sum
from fgawave.scene import WaveProblem


def problem(A0=("1", "0"), B0=("0", "0"), S0="x1", speed="1", d=1, eps=1 / 64):
    lo, hi = [-1.0] * d, [2.0] * d
    return WaveProblem.from_strings(d=d, epsilon=eps, lo=lo, hi=hi, speed=speed, S0=S0, A0=A0, B0=B0)


def test_wkb_data_lives_on_plus_branch(ex1):
    plus, minus = split_branches(ex1)
    x = np.linspace(0.1, 1.0, 20)[:, None]
    A0 = np.exp(-100 * (x[:, 0] - 0.5) ** 2)
    assert np.allclose(plus.amplitude(x), A0)
    assert np.allclose(minus.amplitude(x), 0)


def test_zero_velocity_splits_evenly():
    plus, minus = split_branches(problem(A0=("exp(-x1^2)", "0")))
    x = np.linspace(-1, 1, 5)[:, None]
    assert np.allclose(plus.amplitude(x), 0.5 * np.exp(-x[:, 0] ** 2))
    assert np.allclose(minus.amplitude(x), 0.5 * np.exp(-x[:, 0] ** 2))


def test_constant_data_substitution():
    # c|grad S0| = 2 * 1.5 = 3, B0 = 3i
    pr = problem(A0=("2", "0"), B0=("0", "3"), S0="1.5*x1", speed="2")
    plus, minus = split_branches(pr)
    x = np.array([[0.3]])
    assert plus.amplitude(x)[0] == pytest.approx(0.5)
    assert minus.amplitude(x)[0] == pytest.approx(1.5)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9))
def test_branch_completeness(x, y):
    pr = problem(A0=("exp(-x1^2)*cos(x2)", "sin(x1)"), B0=("x2", "exp(x1)"), S0="x1 + 0.3*sin(x2)",
                 speed="1 + 0.2*x1^2", d=2)
    plus, minus = split_branches(pr)
    X = np.array([[x, y]])
    A0 = pr.A0(x, y)
    B0 = pr.B0(x, y)
    c = 1 + 0.2 * x ** 2
    g = np.linalg.norm(pr.grad_S0(X)[0])
    assert plus.amplitude(X)[0] + minus.amplitude(X)[0] == pytest.approx(complex(A0))
    assert plus.amplitude(X)[0] - minus.amplitude(X)[0] == pytest.approx(complex(1j * B0 / (c * g)))


def test_vanishing_phase_gradient_on_support_is_an_error():
    pr = problem(A0=("exp(-x1^2)", "0"), B0=("1", "0"), S0="x1^2")
    with pytest.raises(BranchSplitError):
        split_branches(pr)[0].amplitude(np.array([[0.0]]))


def test_mesh_spec_validation():
    with pytest.raises(ValueError):
        MeshSpec(1, 0.0, 0.1, 0.1, 4, 1, 0.0, 0.5)
    with pytest.raises(ValueError):
        MeshSpec(1, 0.1, 0.1, 0.1, 0, 1, 0.0, 0.5)
    with pytest.raises(ValueError):
        MeshSpec(1, 0.1, 0.1, 0.1, 4, 1, 0.0, 0.0)
    with pytest.raises(ValueError):
        MeshSpec(2, [0.1, 0.1, 0.1], 0.1, 0.1, 4, 1, 0.0, 0.5)
    spec = MeshSpec(1, 0.5, 0.5, 0.5, 4, 1, 0.0, 0.5)
    with pytest.warns(MeshWarning):
        spec.check_scaling(1 / 256)


def test_phase_mesh_centred_on_phase_gradient():
    pr = problem()
    spec = MeshSpec(1, 0.1, 0.1, 0.1, 4, 1, 0.0, 0.5)
    mesh = build_phase_mesh(pr, spec)
    assert len(mesh) == 12
    at = np.isclose(mesh.q[:, 0], 0.3)
    assert np.allclose(sorted(mesh.p[at, 0]), [0.9, 1.0, 1.1])


def test_phase_mesh_follows_curved_phase():
    pr = problem(S0="sin(6*x1)/12")
    spec = MeshSpec(1, 0.05, 0.05, 0.05, 10, 0, 0.0, 0.5)
    mesh = build_phase_mesh(pr, spec)
    assert np.allclose(mesh.p[:, 0], np.cos(6 * mesh.q[:, 0]) / 2)


def test_phase_mesh_counting_2d_and_order():
    pr = problem(S0="x1 + 2*x2", d=2)
    spec = MeshSpec(2, 0.1, 0.1, 0.1, 2, 0, 0.0, 0.5)
    mesh = build_phase_mesh(pr, spec)
    assert len(mesh) == 4
    assert np.allclose(mesh.p, [1.0, 2.0])
    assert mesh.q.tolist() == [[0.0, 0.0], [0.0, 0.1], [0.1, 0.0], [0.1, 0.1]]


def test_small_momentum_labels_are_excluded():
    pr = problem(S0="0.1*x1")
    spec = MeshSpec(1, 0.1, 0.1, 0.1, 3, 2, 0.0, 0.5)
    mesh = build_phase_mesh(pr, spec)
    assert mesh.excluded == 3
    assert np.all(np.abs(mesh.p) >= 1e-6)
    with pytest.raises(EmptyMeshError):
        build_phase_mesh(pr, MeshSpec(1, 0.1, 0.1, 0.1, 3, 0, 0.0, 0.5), p_min=1.0)


@pytest.mark.parametrize("d", [1, 2])
def test_window_of_constant_is_gaussian(d):
    # psi = (2 pi eps)^{d/2} exp(-|p|^2/(2 eps)) for u = 1 and a wide cutoff
    eps = 1 / 64
    spec = MeshSpec(d, 0.05, 0.05, 1 / 64, 3, 1, 0.5, 12 * math.sqrt(eps))
    Y = np.stack(np.meshgrid(*spec.y_axes(), indexing="ij"), -1)
    ones = np.ones(Y.shape[:-1], complex)
    q = np.full((3, d), 0.55)
    p = np.array([[0.0] * d, [0.1] * d, [0.2] + [0.0] * (d - 1)])
    psi = window_sum(ones, spec.y0, spec.dy, q, p, eps, spec.theta)
    want = (2 * np.pi * eps) ** (d / 2) * np.exp(-np.sum(p ** 2, 1) / (2 * eps))
    assert np.allclose(psi, want, rtol=1e-9, atol=1e-14)
    assert np.all(window_sum(0 * ones, spec.y0, spec.dy, q, p, eps, spec.theta) == 0)


def test_window_conjugate_symmetry_for_real_data(rng):
    eps = 1 / 64
    y0, dy = np.array([-0.5]), np.array([1 / 64])
    u = np.exp(-10 * (np.arange(96) / 64 - 0.1) ** 2) * (1 + 0.1 * rng.standard_normal(96))
    q = rng.uniform(0, 0.5, (6, 1))
    p = rng.uniform(-1, 1, (6, 1))
    a = window_sum(u.astype(complex), y0, dy, q, p, eps, 6 * math.sqrt(eps))
    b = window_sum(u.astype(complex), y0, dy, q, -p, eps, 6 * math.sqrt(eps))
    assert np.allclose(a, np.conj(b), rtol=1e-13, atol=1e-16)


def test_window_converges_when_dy_halves():
    eps = 1 / 128
    pr = problem(A0=("exp(-20*(x1-0.5)^2)", "0"), S0="x1 + 0.2*x1^2", eps=eps)
    plus = split_branches(pr)[0]
    q = np.array([[0.45], [0.5]])
    p = np.array([[1.2], [1.15]])
    vals = []
    for dy in (1 / 64, 1 / 128, 1 / 256):
        spec = MeshSpec(1, 0.05, 0.05, dy, 12, 0, 0.0, 6 * math.sqrt(eps))
        vals.append(window_transform(plus, q, p, spec, eps))
    assert np.max(np.abs(vals[2] - vals[1])) < 1e-10 * np.max(np.abs(vals[2]))


def test_window_localises_on_lagrangian_curve():
    # psi of exp(i sin(6y)/(12 eps)) is concentrated near p = cos(6q)/2; the decay off the
    # curve is exp(-d^2/(2 eps (1 + S''^2))), so sample q where |S''| = |3 sin 6q| <= 1
    eps = 1 / 128
    dy = 1 / 512
    y = -1 + np.arange(3 * 512) * dy
    u = np.exp(1j * np.sin(6 * y) / (12 * eps))
    q = np.arange(64) / 64
    q = q[np.abs(3 * np.sin(6 * q)) <= 1][:, None]
    assert len(q) >= 8
    p = np.cos(6 * q) / 2
    args = ([-1.0], [dy])
    on = np.abs(window_sum(u, *args, q, p, eps, 6 * math.sqrt(eps)))
    for shift in (5 * math.sqrt(eps), -5 * math.sqrt(eps)):
        off = np.abs(window_sum(u, *args, q, p + shift, eps, 6 * math.sqrt(eps)))
        assert np.all(off * 10 <= on)


def test_truncation_warning_when_y_mesh_too_small():
    eps = 1 / 64
    pr = problem(A0=("1", "0"), S0="x1", eps=eps)
    spec = MeshSpec(1, 0.1, 0.1, 0.05, 4, 0, 0.0, 6 * math.sqrt(eps), y0=0.0, Ny=8)
    with pytest.warns(TruncationWarning):
        window_transform(split_branches(pr)[0], [[0.1]], [[1.0]], spec, eps)


def test_default_y_mesh_covers_cutoff_ball(ex1):
    spec = MeshSpec(1, 1 / 32, 1 / 32, 1 / 32, 32, 33, 0.0, 6 / 8)
    with warnings.catch_warnings():
        warnings.simplefilter("error", TruncationWarning)
        window_transform(split_branches(ex1)[0], [[0.0], [31 / 32]], [[1.0], [1.0]], spec, 1 / 64)


def test_initial_atoms_for_example1_mesh(ex1):
    spec = MeshSpec(1, 1 / 32, 1 / 32, 1 / 32, 32, 33, 0.0, 6 / 8)
    atoms = init_atoms(split_branches(ex1), build_phase_mesh(ex1, spec), spec, 1 / 64)
    assert 0 < len(atoms) <= 32 * 67
    assert np.all(atoms.a == math.sqrt(2))
    assert np.all(atoms.Q == atoms.q) and np.all(atoms.P == atoms.p)
    assert np.all(atoms.F == np.eye(2))
    # the minus branch carries nothing and is pruned entirely
    assert np.all(atoms.sign == 1)
    c = atoms.census
    assert c["candidates"] == c["atoms"] + c["pruned"]
    assert atoms.cell == (1 / 32) ** 2


def test_two_dimensional_atoms_start_with_a_equal_two(ex3):
    spec = MeshSpec(2, 1 / 8, 1 / 8, 1 / 16, 4, 1, -0.25, 6 * math.sqrt(1 / 128))
    atoms = init_atoms(split_branches(ex3), build_phase_mesh(ex3, spec), spec, 1 / 128)
    assert np.allclose(atoms.a, 2.0)


def test_pruning_drops_zero_weights():
    pr = problem(A0=("0", "0"), S0="x1")
    spec = MeshSpec(1, 0.1, 0.1, 0.1, 3, 1, 0.0, 0.5)
    atoms = init_atoms(split_branches(pr), build_phase_mesh(pr, spec), spec, 1 / 64)
    assert len(atoms) == 0
    kept = init_atoms(split_branches(pr), build_phase_mesh(pr, spec), spec, 1 / 64, prune=None)
    assert len(kept) == 18
