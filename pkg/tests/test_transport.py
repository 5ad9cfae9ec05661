"""Exact OT solver vs the vertex-enumeration oracle, path metrics, pairings."""

import math

import numpy as np
import pytest

from measureflow.errors import InputError
from measureflow.measure import DiscreteMeasure, dirac, mixture, tangent_atoms
from measureflow.paths import PathEnsemble, PiecewisePath, Provenance, constant_path
from measureflow.transport import (
    bram_pairing,
    bram_pairing_detailed,
    brute_force_w2,
    optimal_coupling,
    path_sup_distance,
    w2_distance,
    wasserstein2_sup,
)


def _random_measure(rng, max_atoms=4, dims=(1, 2, 3)):
    d = int(rng.choice(dims))
    n = int(rng.integers(1, max_atoms + 1))
    w = rng.random(n)
    return DiscreteMeasure(rng.normal(size=(n, d)), w / w.sum())


def test_optimal_coupling_examples():
    r = optimal_coupling(dirac(0.0), dirac(1.0))
    assert np.isclose(r.cost, 1.0) and np.isclose(r.distance, 1.0)

    # only one coupling exists: each half unit of mass moves distance 1
    r = optimal_coupling(mixture([0.0, 2.0], [0.5, 0.5]), dirac(1.0))
    assert np.isclose(r.cost, 1.0) and np.isclose(r.distance, 1.0)

    m = mixture([0.0, 1.0], [0.5, 0.5])
    assert optimal_coupling(m, m).cost <= 1e-15


def test_optimal_coupling_dimension_mismatch():
    with pytest.raises(InputError):
        optimal_coupling(dirac(0.0), dirac([0.0, 1.0]))


def test_brute_force_examples():
    assert np.isclose(brute_force_w2(dirac(0.0), dirac(1.0)), 1.0)
    # identity pairing costs (1 + 1)/2 = 1, crossing costs 9: the minimum is 1
    assert np.isclose(
        brute_force_w2(mixture([0.0, 4.0], [0.5, 0.5]), mixture([1.0, 3.0], [0.5, 0.5])),
        1.0,
    )
    # vertex enumeration: best plan moves 1/3 of the mass across distance 3
    got = brute_force_w2(
        mixture([0.0, 3.0], [1 / 3, 2 / 3]), mixture([0.0, 3.0], [2 / 3, 1 / 3])
    )
    assert np.isclose(got, math.sqrt(3.0))


def test_brute_force_size_cap():
    rng = np.random.default_rng(0)
    mu = DiscreteMeasure(rng.normal(size=(9, 1)), np.full(9, 1 / 9))
    nu = DiscreteMeasure(rng.normal(size=(9, 1)), np.full(9, 1 / 9))
    with pytest.raises(InputError):
        brute_force_w2(mu, nu)  # 81 > 64 atom pairs


def test_solver_matches_oracle_on_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(120):
        mu = _random_measure(rng)
        nu = _random_measure(rng)
        while nu.dim != mu.dim:
            nu = _random_measure(rng)
        flow = optimal_coupling(mu, nu, method="flow").cost
        oracle = brute_force_w2(mu, nu) ** 2
        assert abs(flow - oracle) <= 1e-9 * max(1.0, oracle)
        if mu.dim == 1:
            quant = optimal_coupling(mu, nu, method="quantile").cost
            assert abs(quant - oracle) <= 1e-9 * max(1.0, oracle)


def test_metric_axioms():
    rng = np.random.default_rng(8)
    for _ in range(60):
        d = int(rng.integers(1, 4))
        ms = []
        for _ in range(3):
            n = int(rng.integers(1, 5))
            w = rng.random(n)
            ms.append(DiscreteMeasure(rng.normal(size=(n, d)), w / w.sum()))
        ab = w2_distance(ms[0], ms[1])
        ba = w2_distance(ms[1], ms[0])
        assert abs(ab - ba) <= 1e-10
        assert w2_distance(ms[0], ms[0]) <= 1e-12
        assert ab <= w2_distance(ms[0], ms[2]) + w2_distance(ms[2], ms[1]) + 1e-9


def test_degeneracy_flag():
    # unit square corners: every admissible plan costs exactly 1
    mu = DiscreteMeasure(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([0.5, 0.5]))
    nu = DiscreteMeasure(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0.5, 0.5]))
    assert optimal_coupling(mu, nu, method="flow").degenerate is True
    # generic instance: unique optimum
    rng = np.random.default_rng(9)
    mu = DiscreteMeasure(rng.normal(size=(3, 2)), np.array([0.2, 0.3, 0.5]))
    nu = DiscreteMeasure(rng.normal(size=(2, 2)), np.array([0.4, 0.6]))
    assert optimal_coupling(mu, nu, method="flow").degenerate is False
    # the 1-d fast path produces no dual certificate
    assert optimal_coupling(dirac(0.0), dirac(1.0)).degenerate is None


def test_path_sup_distance_examples():
    p1 = PiecewisePath(np.array([0.0, 1.0]), np.array([[0.0], [1.0]]))
    p2 = constant_path(0.0, 1.0)
    assert np.isclose(path_sup_distance(p1, p2), 1.0)
    assert path_sup_distance(p1, p1) == 0.0
    spike = PiecewisePath(np.array([0.0, 0.5, 1.0]), np.array([[0.0], [1.0], [0.0]]))
    assert np.isclose(path_sup_distance(spike, p2), 1.0)


def test_path_sup_distance_union_grid_is_exact():
    # different grids describing different polylines: sup attained off both coarse grids
    a = PiecewisePath(np.array([0.0, 0.5, 1.0]), np.array([[0.0], [1.0], [0.0]]))
    b = PiecewisePath(np.array([0.0, 0.25, 1.0]), np.array([[0.0], [-1.0], [0.0]]))
    # at t = 0.25: a = 0.5, b = -1 -> gap 1.5; at t = 0.5: a = 1, b = -2/3 -> gap 5/3
    assert np.isclose(path_sup_distance(a, b), 5.0 / 3.0)


def test_path_sup_distance_horizon_mismatch():
    with pytest.raises(InputError):
        path_sup_distance(constant_path(0.0, 1.0), constant_path(0.0, 2.0))


def _ensemble(paths, weights):
    return PathEnsemble(tuple(paths), np.asarray(weights), Provenance("exact-tree"))


def test_wasserstein2_sup_examples():
    g = PiecewisePath(np.array([0.0, 1.0]), np.array([[0.0], [1.0]]))
    h = constant_path(0.0, 1.0)
    assert np.isclose(
        wasserstein2_sup(_ensemble([g], [1.0]), _ensemble([h], [1.0])),
        path_sup_distance(g, h),
    )
    e = _ensemble([g, h], [0.5, 0.5])
    assert wasserstein2_sup(e, e) <= 1e-12
    c0 = constant_path(0.0, 1.0)
    c1 = constant_path(1.0, 1.0)
    e2 = _ensemble([c0, c1], [0.5, 0.5])
    assert wasserstein2_sup(e2, e2) <= 1e-12


def test_wasserstein2_sup_dominates_marginal_w2():
    rng = np.random.default_rng(10)
    grid = np.linspace(0.0, 1.0, 5)
    for _ in range(10):
        n1, n2 = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        e1 = _ensemble(
            [PiecewisePath(grid, rng.normal(size=(5, 2))) for _ in range(n1)],
            np.full(n1, 1.0 / n1),
        )
        e2 = _ensemble(
            [PiecewisePath(grid, rng.normal(size=(5, 2))) for _ in range(n2)],
            np.full(n2, 1.0 / n2),
        )
        w_path = wasserstein2_sup(e1, e2)
        for t in rng.random(4):
            w_marg = w2_distance(e1.evaluate(float(t)), e2.evaluate(float(t)))
            assert w_marg <= w_path + 1e-9


def test_bram_pairing_examples():
    assert np.isclose(bram_pairing(tangent_atoms([((0.0,), (1.0,))], [1.0]), dirac(1.0)), -1.0)
    assert np.isclose(bram_pairing(tangent_atoms([((0.0,), (1.0,))], [1.0]), dirac(0.0)), 0.0)
    phi = tangent_atoms([((0.0,), (1.0,)), ((0.0,), (-1.0,))], [0.5, 0.5])
    assert abs(bram_pairing(phi, dirac(2.0))) <= 1e-12


def test_bram_pairing_vanishes_on_own_marginal():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n, d = int(rng.integers(1, 6)), int(rng.integers(1, 3))
        w = rng.random(n)
        phi = tangent_atoms(
            [(rng.normal(size=d), rng.normal(size=d)) for _ in range(n)], w / w.sum()
        )
        assert abs(bram_pairing(phi, phi.x_marginal())) <= 1e-12


def test_bram_pairing_detail_reports_transport():
    phi = tangent_atoms([((0.0,), (1.0,))], [1.0])
    value, res = bram_pairing_detailed(phi, dirac(1.0))
    assert np.isclose(value, -1.0)
    assert res.method == "flow"
    assert res.degenerate in (True, False)


def test_transport_result_cost_consistency():
    # the reported cost equals the recomputed coupling cost within 1e-10
    rng = np.random.default_rng(12)
    for method in ("flow", "quantile"):
        for _ in range(15):
            d = 1 if method == "quantile" else int(rng.integers(1, 4))
            m, n = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            wm, wn = rng.random(m), rng.random(n)
            mu = DiscreteMeasure(rng.normal(size=(m, d)), wm / wm.sum())
            nu = DiscreteMeasure(rng.normal(size=(n, d)), wn / wn.sum())
            res = optimal_coupling(mu, nu, method=method)
            c = res.coupling
            recomputed = float(
                np.sum(c.weights * np.sum((c.first_atoms - c.second_atoms) ** 2, axis=1))
            )
            assert abs(recomputed - res.cost) <= 1e-10
            assert abs(res.distance - np.sqrt(res.cost)) <= 1e-15
