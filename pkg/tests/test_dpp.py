"""Backward induction solver: grids, envelopes, value tables, policies."""

from __future__ import annotations

import itertools
from math import comb

import numpy as np
import pytest

from dcstop import (
    ConcavePL,
    ConfigError,
    CostSpec,
    DiscreteMeasure,
    LatticeSpec,
    NodeId,
    SimplexGrid,
    SizeGuardError,
    StoppingKernel,
    accumulate,
    atom_boundary,
    check_dpp,
    evaluate,
    extract_policy,
    from_samples,
    marginal_of,
    nodes_at_step,
    one_step_sup,
    oracle_value,
    pair_sup,
    perspective,
    solve,
    state,
    strong_value,
    termination,
    to_kernel,
    validate,
)

from conftest import all_paths, brute_kernel_stats, random_measure

INDICATOR = CostSpec(kind="terminal", name="indicator", params={"threshold": 1.0})
IDENTITY = CostSpec(kind="terminal", name="identity")
SQUARE = CostSpec(kind="terminal", name="square")
ABS = CostSpec(kind="terminal", name="abs")


def worked_instance():
    spec = LatticeSpec(depth=2, dt=1.0)
    mu = DiscreteMeasure((1.0, 2.0), (0.5, 0.5))
    return spec, INDICATOR, mu


def random_simplex_points(rng, k, n):
    return rng.dirichlet(np.ones(k), size=n)


class TestSimplexGrid:
    @pytest.mark.parametrize("k,resolution", [(1, 5), (2, 7), (3, 4), (4, 3)])
    def test_size_counts_compositions(self, k, resolution):
        grid = SimplexGrid(k, resolution)
        assert grid.size == comb(resolution + k - 1, k - 1)
        assert (grid.points.sum(axis=1) == resolution).all()
        assert (grid.points >= 0).all()
        assert np.allclose(grid.fractions.sum(axis=1), 1.0)

    def test_barycentric_at_grid_points(self):
        grid = SimplexGrid(3, 5)
        for i, y in enumerate(grid.fractions):
            cell = grid.barycentric(y)
            top = {j: w for j, w in cell if w > 1e-12}
            assert top == pytest.approx({i: 1.0}, abs=1e-12)

    def test_barycentric_weights_reproduce_the_point(self):
        rng = np.random.default_rng(50)
        grid = SimplexGrid(4, 6)
        for y in random_simplex_points(rng, 4, 25):
            cell = grid.barycentric(y)
            assert all(w >= -1e-12 for _, w in cell)
            assert sum(w for _, w in cell) == pytest.approx(1.0, abs=1e-12)
            recon = sum(w * grid.fractions[i] for i, w in cell)
            assert recon == pytest.approx(y, abs=1e-10)

    def test_interpolation_exact_for_affine_data(self):
        rng = np.random.default_rng(51)
        grid = SimplexGrid(3, 8)
        a = np.array([0.3, -1.2, 2.0])
        values = grid.fractions @ a
        for y in random_simplex_points(rng, 3, 25):
            assert grid.interpolate(values, y) == pytest.approx(float(y @ a), abs=1e-12)

    def test_max_adjacent_diff_hand_example(self):
        grid = SimplexGrid(2, 2)
        order = [grid.index[key] for key in [(2, 0), (1, 1), (0, 2)]]
        values = np.empty(3)
        values[order] = [0.0, 1.0, 3.0]
        assert grid.max_adjacent_diff(values) == pytest.approx(2.0, abs=0)

    def test_single_coordinate_grid_is_trivial(self):
        grid = SimplexGrid(1, 9)
        assert grid.size == 1
        assert grid.barycentric([1.0]) == [(0, 1.0)]
        assert grid.max_adjacent_diff([4.2]) == 0.0

    def test_guards(self):
        with pytest.raises(ConfigError):
            SimplexGrid(2, 0)
        with pytest.raises(ConfigError):
            SimplexGrid(0, 5)
        with pytest.raises(SizeGuardError):
            SimplexGrid(3, 2000)


class TestEnvelope:
    def test_constant(self):
        w = ConcavePL.constant(2.5)
        assert w.k == 1
        assert w.evaluate([1.0]) == 2.5

    def test_dominates_samples_and_matches_concave_data(self):
        grid = SimplexGrid(3, 6)
        rows = np.array([[1.0, 0.0, 0.5], [0.2, 0.8, 0.1]])
        concave = (grid.fractions @ rows.T).min(axis=1)
        w = from_samples(grid, concave)
        at_grid = w.evaluate_batch(grid.fractions)
        assert (at_grid >= concave - 1e-12).all()
        assert at_grid == pytest.approx(concave, abs=1e-12)

    def test_strictly_lifts_convex_data(self):
        grid = SimplexGrid(2, 4)
        values = np.abs(grid.fractions[:, 0] - 0.5)
        w = from_samples(grid, values)
        assert w.evaluate([0.5, 0.5]) == pytest.approx(0.5, abs=1e-12)

    def test_batch_matches_pointwise(self):
        rng = np.random.default_rng(52)
        grid = SimplexGrid(3, 5)
        w = from_samples(grid, rng.normal(size=grid.size))
        ys = random_simplex_points(rng, 3, 10)
        batch = w.evaluate_batch(ys)
        single = [w.evaluate(y) for y in ys]
        assert batch == pytest.approx(single, abs=1e-12)

    def test_argmin_piece_attains_the_value(self):
        rng = np.random.default_rng(53)
        grid = SimplexGrid(3, 5)
        w = from_samples(grid, rng.normal(size=grid.size))
        for y in random_simplex_points(rng, 3, 10):
            row = w.pieces[w.argmin_piece(y)]
            assert float(row @ y) == pytest.approx(w.evaluate(y), abs=1e-12)


def brute_grid_pair_sup(grid, vu, vd):
    """Best grid-pair randomization per grid point, by full enumeration."""
    out = np.full(grid.size, -np.inf)
    for t, target in enumerate(grid.points):
        doubled = 2 * target
        for i, p in enumerate(grid.points):
            j = grid.index.get(tuple((doubled - p).tolist()))
            if j is not None:
                out[t] = max(out[t], 0.5 * (vu[i] + vd[j]))
    return out


class TestPairSup:
    def test_worked_two_coordinate_example(self):
        grid = SimplexGrid(2, 10)
        vu = grid.fractions[:, 0]
        vd = 1.0 - grid.fractions[:, 0]
        w = pair_sup(from_samples(grid, vu), from_samples(grid, vd))
        for y1 in np.linspace(0.0, 1.0, 21):
            expect = min(y1 + 0.5, 1.5 - y1)
            assert w.evaluate([y1, 1.0 - y1]) == pytest.approx(expect, abs=1e-12)
        brute = brute_grid_pair_sup(grid, vu, vd)
        assert w.evaluate_batch(grid.fractions) == pytest.approx(brute, abs=1e-12)

    def test_dominates_average_and_brute_pairs(self):
        rng = np.random.default_rng(54)
        grid = SimplexGrid(3, 4)
        vu = rng.normal(size=grid.size)
        vd = rng.normal(size=grid.size)
        w = pair_sup(from_samples(grid, vu), from_samples(grid, vd))
        got = w.evaluate_batch(grid.fractions)
        assert (got >= 0.5 * (vu + vd) - 1e-12).all()
        assert (got >= brute_grid_pair_sup(grid, vu, vd) - 1e-12).all()
        assert got.max() <= 0.5 * (vu.max() + vd.max()) + 1e-12

    def test_midpoint_concave(self):
        rng = np.random.default_rng(55)
        grid = SimplexGrid(3, 4)
        w = pair_sup(from_samples(grid, rng.normal(size=grid.size)),
                     from_samples(grid, rng.normal(size=grid.size)))
        for a, b in zip(random_simplex_points(rng, 3, 20),
                        random_simplex_points(rng, 3, 20)):
            mid = 0.5 * (a + b)
            assert w.evaluate(mid) >= 0.5 * (w.evaluate(a) + w.evaluate(b)) - 1e-12

    def test_self_pair_is_a_fixpoint_on_concave_data(self):
        grid = SimplexGrid(3, 5)
        rows = np.array([[0.5, -0.2, 1.0], [0.0, 0.9, 0.3]])
        concave = (grid.fractions @ rows.T).min(axis=1)
        again = one_step_sup(grid, concave, concave)
        assert again == pytest.approx(concave, abs=1e-12)

    def test_one_step_sup_concavifies_inputs_first(self):
        grid = SimplexGrid(2, 4)
        convex = np.abs(grid.fractions[:, 0] - 0.5)
        got = one_step_sup(grid, convex, convex)
        assert got.min() >= 0.5 - 1e-12


class TestAtomBoundary:
    def test_all_mass_on_the_atom_skips_the_table(self):
        grid = SimplexGrid(2, 4)
        poison = np.full(grid.size, np.nan)
        assert atom_boundary(grid, poison, 3.25, [1.0, 0.0, 0.0]) == 3.25

    def test_no_mass_on_the_atom_reads_the_table(self):
        grid = SimplexGrid(2, 4)
        values = grid.fractions[:, 0] * 2.0
        got = atom_boundary(grid, values, 99.0, [0.0, 0.25, 0.75])
        assert got == pytest.approx(0.5, abs=1e-12)

    def test_even_split_against_zero_table(self):
        grid = SimplexGrid(1, 1)
        assert atom_boundary(grid, [0.0], 1.0, [0.5, 0.5]) == pytest.approx(0.5, abs=0)

    def test_matches_perspective_everywhere(self):
        rng = np.random.default_rng(56)
        grid = SimplexGrid(2, 6)
        rows = np.array([[0.4, 1.1], [1.0, 0.2]])
        inner_vals = (grid.fractions @ rows.T).min(axis=1)
        cone = perspective(0.8, from_samples(grid, inner_vals))
        for y in random_simplex_points(rng, 3, 25):
            direct = atom_boundary(grid, inner_vals, 0.8, y)
            assert cone.evaluate(y) == pytest.approx(direct, abs=1e-12)

    def test_perspective_apex_value(self):
        inner = ConcavePL.constant(-7.0)
        cone = perspective(2.0, inner)
        assert cone.evaluate([1.0, 0.0]) == pytest.approx(2.0, abs=1e-12)
        assert cone.evaluate([0.0, 1.0]) == pytest.approx(-7.0, abs=1e-12)
        assert cone.evaluate([0.5, 0.5]) == pytest.approx(-2.5, abs=1e-12)

    def test_shape_mismatch(self):
        grid = SimplexGrid(2, 4)
        with pytest.raises(ConfigError):
            atom_boundary(grid, np.zeros(grid.size), 0.0, [0.5, 0.25, 0.2, 0.05])


class TestSolve:
    def test_worked_instance_value(self):
        spec, cost, mu = worked_instance()
        for resolution in (2, 50):
            table = solve(spec, cost, mu, resolution=resolution)
            assert table.root_value == pytest.approx(0.5, abs=1e-12)

    def test_martingale_cost_prices_to_zero(self):
        rng = np.random.default_rng(57)
        spec = LatticeSpec(depth=4, dt=0.25)
        for _ in range(5):
            mu = random_measure(rng, (0.25, 0.75, 1.0))
            table = solve(spec, IDENTITY, mu, resolution=3)
            assert table.root_value == pytest.approx(0.0, abs=1e-12)

    def test_square_cost_prices_to_mean_time(self):
        rng = np.random.default_rng(58)
        spec = LatticeSpec(depth=4, dt=0.25)
        for resolution in (1, 37):
            mu = random_measure(rng, (0.5, 0.75, 1.0))
            table = solve(spec, SQUARE, mu, resolution=resolution)
            assert table.root_value == pytest.approx(mu.mean(), abs=1e-12)

    def test_root_value_ignores_resolution(self):
        rng = np.random.default_rng(59)
        spec = LatticeSpec(depth=3, dt=0.5)
        mu = random_measure(rng, (0.5, 1.0, 1.5))
        coarse = solve(spec, ABS, mu, resolution=2)
        fine = solve(spec, ABS, mu, resolution=40)
        assert fine.root_value == pytest.approx(coarse.root_value, abs=1e-15)
        assert fine.root_value >= coarse.root_value - 1e-12

    def test_debug_mode_validates_renormalization(self):
        rng = np.random.default_rng(60)
        spec = LatticeSpec(depth=3, dt=0.5)
        mu = random_measure(rng, (0.5, 1.0, 1.5))
        table = solve(spec, ABS, mu, resolution=7, debug=True)
        assert table.root_value >= 0.0

    def test_terminal_atom_tables_match_the_cost(self):
        spec, cost, mu = worked_instance()
        table = solve(spec, cost, mu, resolution=4)
        for node in nodes_at_step(spec, 2):
            vals = table.tables[(1, 2, node)]
            assert vals.shape == (1,)
            assert vals[0] == evaluate(cost, state(spec, node))

    def test_tables_are_midpoint_concave(self):
        rng = np.random.default_rng(61)
        spec = LatticeSpec(depth=3, dt=0.5)
        mu = random_measure(rng, (0.5, 1.0, 1.5))
        table = solve(spec, INDICATOR, mu, resolution=6)
        for (k, _, _), vals in table.tables.items():
            if k < 2:
                continue
            grid = table.grid(k)
            for _ in range(20):
                i, j = rng.integers(0, grid.size, size=2)
                doubled = grid.points[i] + grid.points[j]
                if (doubled % 2).any():
                    continue
                m = grid.index.get(tuple((doubled // 2).tolist()))
                if m is None:
                    continue
                assert vals[m] >= 0.5 * (vals[i] + vals[j]) - 1e-12

    def test_history_and_recombining_agree(self):
        rng = np.random.default_rng(62)
        mu = random_measure(rng, (1.0, 3.0))
        flat = solve(LatticeSpec(depth=3, dt=1.0), ABS, mu, resolution=5)
        full = solve(LatticeSpec(depth=3, dt=1.0, mode="history"), ABS, mu, resolution=5)
        assert full.root_value == pytest.approx(flat.root_value, abs=1e-12)

    def test_slack_floor_for_constant_tables(self):
        spec = LatticeSpec(depth=2, dt=1.0)
        mu = DiscreteMeasure((1.0, 2.0), (0.5, 0.5))
        table = solve(spec, CostSpec(kind="time", name="indicator",
                                     params={"threshold": 0.0}), mu, resolution=5)
        assert table.slack == 1e-9

    def test_agrees_with_exhaustive_optimum_on_the_worked_instance(self):
        spec, cost, mu = worked_instance()
        table = solve(spec, cost, mu, resolution=10)
        assert table.root_value == pytest.approx(strong_value(spec, cost, mu), abs=1e-12)
        assert table.root_value == pytest.approx(oracle_value(spec, cost, mu), abs=1e-12)

    def test_digest_is_stable(self):
        spec, cost, mu = worked_instance()
        a = solve(spec, cost, mu, resolution=5)
        b = solve(spec, cost, mu, resolution=5)
        assert a.digest == b.digest
        c = solve(spec, cost, mu, resolution=6)
        assert c.digest != a.digest

    def test_bad_resolution(self):
        spec, cost, mu = worked_instance()
        with pytest.raises(ConfigError):
            solve(spec, cost, mu, resolution=0)


class TestCheckDpp:
    def thetas(self):
        return {
            "first_step": lambda spec, node: node.step >= 1,
            "hit_or_cap": lambda spec, node: (
                (node.level is not None and node.level >= 1) or node.step >= 2
            ),
            "past_horizon": lambda spec, node: node.step >= 99,
        }

    def test_worked_instance_residuals(self):
        spec, cost, mu = worked_instance()
        table = solve(spec, cost, mu, resolution=4)
        for theta in self.thetas().values():
            report = check_dpp(table, theta)
            assert report.ok
            assert report.slack == table.slack

    def test_degenerate_frontier_recomputes_exactly(self):
        spec, cost, mu = worked_instance()
        table = solve(spec, cost, mu, resolution=4)
        report = check_dpp(table, self.thetas()["past_horizon"])
        assert report.residual <= 1e-12

    def test_random_instance_residuals(self):
        rng = np.random.default_rng(63)
        spec = LatticeSpec(depth=4, dt=0.25)
        mu = random_measure(rng, (0.5, 0.75, 1.0))
        table = solve(spec, ABS, mu, resolution=5)
        for theta in self.thetas().values():
            assert check_dpp(table, theta).ok


class TestExtractPolicy:
    def test_worked_instance_structure(self):
        spec, cost, mu = worked_instance()
        tree = extract_policy(solve(spec, cost, mu, resolution=3))
        assert tree.vectors[()] == pytest.approx((0.5, 0.5), abs=1e-12)
        assert tree.vectors[(1,)] == pytest.approx((1.0, 0.0), abs=1e-12)
        assert tree.vectors[(0,)] == pytest.approx((0.0, 1.0), abs=1e-12)
        assert termination(tree).terminating

    def test_policy_validates_and_attains_the_value(self):
        rng = np.random.default_rng(64)
        spec = LatticeSpec(depth=4, dt=0.25)
        for cost in (INDICATOR, ABS, SQUARE):
            mu = random_measure(rng, (0.25, 0.75, 1.0))
            table = solve(spec, cost, mu, resolution=25)
            tree = extract_policy(table)
            assert validate(tree, mu=mu, tol=1e-9).ok
            got = accumulate(tree, spec, cost).leaf_expectation()
            assert got >= table.root_value - table.slack
            assert got <= oracle_value(spec, cost, mu) + 1e-9

    def test_deterministic(self):
        spec, cost, mu = worked_instance()
        table = solve(spec, cost, mu, resolution=5)
        a = extract_policy(table)
        b = extract_policy(table)
        for bits, vec in a.vectors.items():
            assert (b.vectors[bits] == vec).all()

    def test_round_trip_to_kernel(self):
        rng = np.random.default_rng(65)
        spec = LatticeSpec(depth=3, dt=0.5)
        mu = random_measure(rng, (0.5, 1.0, 1.5))
        tree = extract_policy(solve(spec, INDICATOR, mu, resolution=20))
        kernel = to_kernel(tree)
        marg = marginal_of(kernel, kernel.spec)
        assert marg.atoms == mu.atoms
        assert marg.weights == pytest.approx(mu.weights, abs=1e-9)

    def test_depth_guard(self):
        spec = LatticeSpec(depth=13, dt=1.0)
        mu = DiscreteMeasure((1.0, 13.0), (0.5, 0.5))
        table = solve(spec, IDENTITY, mu, resolution=2)
        with pytest.raises(SizeGuardError):
            extract_policy(table)


def brute_pure_value(spec, cost, mu):
    """Exhaustive scan over deterministic rules with the exact target law."""
    steps = sorted(set(round(t / spec.dt) for t in mu.atoms))
    interior = [n for s in steps[:-1] for n in nodes_at_step(spec, s)]
    final = {n: 1.0 for n in nodes_at_step(spec, steps[-1])}
    best = float("-inf")
    for choice in itertools.product((0.0, 1.0), repeat=len(interior)):
        q = dict(zip(interior, choice))
        q.update(final)
        kernel = StoppingKernel(spec, mu.atoms, q)
        weights, objective = brute_kernel_stats(kernel, spec, cost)
        if max(abs(a - b) for a, b in zip(weights, mu.weights)) <= 1e-12:
            best = max(best, objective)
    return best


class TestStrongValue:
    def test_worked_instance(self):
        spec, cost, mu = worked_instance()
        assert strong_value(spec, cost, mu) == pytest.approx(0.5, abs=1e-12)

    def test_unrepresentable_law_is_unattainable(self):
        spec = LatticeSpec(depth=2, dt=1.0)
        mu = DiscreteMeasure((1.0, 2.0), (1 / 3, 2 / 3))
        assert strong_value(spec, INDICATOR, mu) == float("-inf")

    def test_martingale_cost(self):
        spec = LatticeSpec(depth=2, dt=1.0)
        mu = DiscreteMeasure((1.0, 2.0), (0.5, 0.5))
        assert strong_value(spec, IDENTITY, mu) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("weights", [(0.5, 0.5), (0.25, 0.75), (0.75, 0.25)])
    def test_matches_exhaustive_scan_depth2(self, weights):
        spec = LatticeSpec(depth=2, dt=1.0)
        mu = DiscreteMeasure((1.0, 2.0), weights)
        for cost in (INDICATOR, ABS):
            assert strong_value(spec, cost, mu) == pytest.approx(
                brute_pure_value(spec, cost, mu), abs=1e-12)

    def test_matches_exhaustive_scan_depth3(self):
        spec = LatticeSpec(depth=3, dt=1.0)
        for weights in [(0.25, 0.25, 0.5), (0.5, 0.25, 0.25), (0.125, 0.25, 0.625)]:
            mu = DiscreteMeasure((1.0, 2.0, 3.0), weights)
            assert strong_value(spec, ABS, mu) == pytest.approx(
                brute_pure_value(spec, ABS, mu), abs=1e-12)

    def test_never_beats_the_randomized_value(self):
        rng = np.random.default_rng(66)
        spec = LatticeSpec(depth=3, dt=1.0)
        for _ in range(5):
            units = rng.multinomial(8, [1 / 3] * 3) / 8.0
            if (units == 0.0).any():
                continue
            mu = DiscreteMeasure((1.0, 2.0, 3.0), units)
            pure = strong_value(spec, INDICATOR, mu)
            table = solve(spec, INDICATOR, mu, resolution=8)
            assert pure <= table.root_value + 1e-12

    def test_depth_guard(self):
        spec = LatticeSpec(depth=13, dt=1.0)
        mu = DiscreteMeasure((1.0, 13.0), (0.5, 0.5))
        with pytest.raises(SizeGuardError):
            strong_value(spec, IDENTITY, mu)
