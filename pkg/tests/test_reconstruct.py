import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgawave.atoms import AtomSet
from fgawave.decompose import MeshSpec, build_phase_mesh, init_atoms, split_branches
from fgawave.reconstruct import Grid, GridField, coefficients, evaluate_field, spatial_bucket

from conftest import example1


def ex1_atoms(eps, h, Nq, Np):
    pr = example1(eps)
    spec = MeshSpec(1, h, h, h, Nq, Np, 0.0, 6 * math.sqrt(eps))
    return pr, init_atoms(split_branches(pr), build_phase_mesh(pr, spec), spec, eps)


@pytest.fixture(scope="module")
def ex1_t0():
    return ex1_atoms(1 / 64, 1 / 32, 32, 33)


def test_grid_from_box_includes_end():
    g = Grid.from_box([0], [2], 0.25)
    assert g.shape == (9,) and g.axes[0][-1] == 2.0
    assert g.subsample(2).shape == (5,)
    with pytest.raises(ValueError):
        Grid((0.0,), (0.0,), (3,))


def test_zero_atoms_give_zero_field():
    g = Grid((0.0,), (0.1,), (11,))
    assert not np.any(evaluate_field(AtomSet.empty(1), g, 1 / 64, 0.5))


def test_single_atom_closed_form():
    eps = 1 / 64
    atom = AtomSet.initial(1, 1.0, [[0.0]], [[1.0]], math.sqrt(2 * math.pi * eps))
    atom.cell = 1.0
    g = Grid((-0.5,), (1 / 32,), (33,))
    u = evaluate_field(atom, g, eps, 6 * math.sqrt(eps))
    x = g.axes[0]
    peak = math.sqrt(2) / (2 * math.pi * eps)
    want = peak * np.exp(1j * x / eps - x ** 2 / (2 * eps))
    want[np.abs(x) > 6 * math.sqrt(eps)] = 0
    assert np.allclose(u, want, rtol=1e-13, atol=1e-13)
    assert abs(u[16]) == pytest.approx(peak)
    assert np.argmax(np.abs(u)) == 16


def test_dead_atoms_do_not_contribute():
    a = AtomSet.initial(1, 1.0, [[0.0], [0.1]], [[1.0], [1.0]], 1.0)
    a.status[1] = 1
    assert coefficients(a, 0.1)[1] == 0
    g = Grid((-0.5,), (0.05,), (21,))
    only = a.subset([0])
    assert np.array_equal(evaluate_field(a, g, 0.1, 1.0), evaluate_field(only, g, 0.1, 1.0))


def test_round_trip_at_time_zero(ex1_t0):
    pr, atoms = ex1_t0
    g = Grid.from_box([0], [2], 2 ** -10)
    u = evaluate_field(atoms, g, pr.epsilon, 6 * math.sqrt(pr.epsilon))
    u0, _ = pr.initial_data(g.points)
    err = np.max(np.abs(u - u0))
    assert err <= 1e-2 * np.max(np.abs(u0))
    pr2, fine = ex1_atoms(1 / 64, 1 / 64, 64, 66)
    u2 = evaluate_field(fine, g, pr.epsilon, 6 * math.sqrt(pr.epsilon))
    assert np.max(np.abs(u2 - u0)) < err


def test_cutoff_consistency(ex1_t0):
    pr, atoms = ex1_t0
    eps = pr.epsilon
    g = Grid.from_box([0], [2], 2 ** -9)
    u6 = evaluate_field(atoms, g, eps, 6 * math.sqrt(eps))
    u8 = evaluate_field(atoms, g, eps, 8 * math.sqrt(eps))
    assert np.max(np.abs(u8 - u6)) <= 1e-6 * np.max(np.abs(u8))


def test_linearity_over_disjoint_sets(ex1_t0):
    _, atoms = ex1_t0
    g = Grid.from_box([0], [2], 2 ** -8)
    idx = np.arange(len(atoms))
    A, B = atoms.subset(idx % 3 == 0), atoms.subset(idx % 3 != 0)
    both = evaluate_field(atoms, g, 1 / 64, 0.75)
    parts = evaluate_field(A, g, 1 / 64, 0.75) + evaluate_field(B, g, 1 / 64, 0.75)
    assert np.allclose(both, parts, rtol=1e-13, atol=1e-13 * np.max(np.abs(both)))


def test_deterministic(ex1_t0):
    _, atoms = ex1_t0
    g = Grid.from_box([0], [2], 2 ** -8)
    assert np.array_equal(evaluate_field(atoms, g, 1 / 64, 0.75), evaluate_field(atoms, g, 1 / 64, 0.75))


def brute_lists(Q, grid, theta):
    pts = grid.points.reshape(-1, grid.d)
    return [np.flatnonzero(np.sum((Q - x) ** 2, axis=1) <= theta ** 2) for x in pts]


def test_bucket_empty_when_theta_small():
    g = Grid((0.0,), (1.0,), (5,))
    indptr, idx = spatial_bucket(np.array([[0.5], [2.5]]), g, 0.4)
    assert len(idx) == 0 and not indptr.any()


def test_bucket_single_atom_on_node():
    g = Grid((0.0, 0.0), (0.1, 0.1), (11, 11))
    indptr, idx = spatial_bucket(np.array([[0.5, 0.5]]), g, 0.25)
    counts = np.diff(indptr).reshape(11, 11)
    pts = g.points
    inside = np.sum((pts - 0.5) ** 2, axis=-1) <= 0.25 ** 2
    assert np.array_equal(counts == 1, inside)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.05, 0.6), st.sampled_from([1, 2]))
def test_bucket_matches_brute_force(seed, theta, d):
    rng = np.random.default_rng(seed)
    Q = rng.uniform(-0.2, 1.2, (10, d))
    g = Grid((0.0,) * d, (1 / 7,) * d, (50,) if d == 1 else (8, 7))
    indptr, idx = spatial_bucket(Q, g, theta)
    want = brute_lists(Q, g, theta)
    for n, lst in enumerate(want):
        assert np.array_equal(idx[indptr[n]:indptr[n + 1]], lst)


def test_bucketed_sum_equals_unbucketed_sum(rng):
    eps, theta = 1 / 64, 0.3
    Q = rng.uniform(0, 1, (10, 1))
    P = rng.uniform(0.5, 1.5, (10, 1))
    coef = rng.standard_normal(10) + 1j * rng.standard_normal(10)
    g = Grid((0.0,), (1 / 49,), (50,))
    x = g.points.reshape(-1, 1)

    def term(k, xn):
        r = xn - Q[k]
        return coef[k] * np.exp((1j * P[k] @ r - 0.5 * r @ r) / eps)

    indptr, idx = spatial_bucket(Q, g, theta)
    bucketed = np.zeros(len(x), complex)
    brute = np.zeros(len(x), complex)
    for n in range(len(x)):
        for k in idx[indptr[n]:indptr[n + 1]]:
            bucketed[n] += term(k, x[n])
        for k in range(10):
            if np.sum((x[n] - Q[k]) ** 2) <= theta ** 2:
                brute[n] += term(k, x[n])
    assert np.array_equal(bucketed, brute)
    atoms = AtomSet.initial(1, 1.0, Q, P, 1.0)
    atoms.cell = 1.0
    scale = (2 * math.pi * eps) ** 1.5 / math.sqrt(2)
    atoms.weight = coef * scale
    field = evaluate_field(atoms, g, eps, theta)
    assert np.allclose(field, bucketed, rtol=1e-12, atol=1e-12)


def test_csv_round_trip(tmp_path, rng):
    g = Grid((-1.0, 0.0), (0.5, 0.25), (3, 4))
    f = GridField(g, rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4)), "x")
    path = f.write_csv(tmp_path / "f.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "x1,x2,re,im,abs"
    assert len(lines) - 1 == 12
    back = GridField.read_csv(path, g)
    assert np.array_equal(back.values, f.values)
