import numpy as np
import pytest

from jointimpute.errors import DataError, NoDonorInformationError
from jointimpute.estimators import cell_estimates, imputed_proportions, tilde_estimators
from jointimpute.imputation import (
    bhdi,
    build_cell_populations,
    jhdi,
    jhdi3,
    rhdi,
)
from jointimpute.rng import RngStream

import oracles
from conftest import make_dataset, random_fixture


def mm_law_fixture():
    """One class whose complete pairs give the joint law
    (p00, p01, p10, p11) = (0.2, 0.3, 0.3, 0.2), plus one unit missing both."""
    return make_dataset([
        ("a", 2.0, 1, 0, 0), ("b", 3.0, 1, 0, 1),
        ("c", 3.0, 1, 1, 0), ("d", 2.0, 1, 1, 1),
        ("e", 1.0, 1, None, None),
    ], population_size=20)


def conditional_fixture(extra=()):
    """Complete pairs (1,1),(1,1),(0,1),(1,0): P(x=1 | y=1) = 2/3."""
    rows = [("a", 1, 1, 1, 1), ("b", 1, 1, 1, 1),
            ("c", 1, 1, 0, 1), ("d", 1, 1, 1, 0)]
    rows += list(extra)
    return make_dataset(rows, population_size=16)


class TestRespondentPreservation:
    @pytest.mark.parametrize("method", [rhdi, jhdi, bhdi])
    def test_observed_cells_untouched(self, method):
        for seed in (0, 4, 9):
            data = random_fixture(seed)
            out = method(data, RngStream(1000, seed))
            obs_x = ~data.x_missing
            obs_y = ~data.y_missing
            assert np.array_equal(out.completed.x[obs_x], data.x[obs_x])
            assert np.array_equal(out.completed.y[obs_y], data.y[obs_y])
            assert out.completed.is_complete
            assert np.array_equal(out.imputed_x, data.x_missing)

    def test_same_stream_same_result(self):
        data = random_fixture(2)
        for method in (rhdi, jhdi, bhdi):
            a = method(data, RngStream(7, 3))
            b = method(data, RngStream(7, 3))
            assert np.array_equal(a.completed.x, b.completed.x)
            assert np.array_equal(a.completed.y, b.completed.y)


class TestMarginalHotDeck:
    def test_degenerate_marginal(self):
        data = make_dataset([("a", 1, 1, 1, 0), ("b", 1, 1, 1, 1),
                             ("c", 1, 1, None, 0)], population_size=6,
                            x_categories=2)
        out = rhdi(data, RngStream(1))
        assert out.completed.x[2] == 1

    def test_mm_draws_match_joint_law(self):
        data = mm_law_fixture()
        law = np.array([[0.2, 0.3], [0.3, 0.2]])
        runs = 30_000
        counts = np.zeros((2, 2))
        for i in range(runs):
            out = rhdi(data, RngStream(55, i))
            counts[out.completed.x[4], out.completed.y[4]] += 1
        freq = counts / runs
        se = np.sqrt(law * (1 - law) / runs)
        assert np.all(np.abs(freq - law) < 4 * se)

    def test_mm_path_shared_with_joint_procedure(self):
        data = mm_law_fixture()
        for i in range(50):
            a = rhdi(data, RngStream(66, i))
            b = jhdi(data, RngStream(66, i))
            assert a.completed.x[4] == b.completed.x[4]
            assert a.completed.y[4] == b.completed.y[4]

    def test_mc_mean_matches_expected_closed_form(self):
        data = random_fixture(31)
        units = list(data.units)
        joint_exp, margx_exp, _ = oracles.brute_rhdi_expectation(
            units, data.population_size, data.x_categories, data.y_categories)
        runs = 4000
        acc = np.zeros((data.x_categories, data.y_categories))
        for i in range(runs):
            out = rhdi(data, RngStream(77, i))
            acc += imputed_proportions(out.completed).joint
        acc /= runs
        w_max = data.weights.max()
        se = w_max / data.population_size / np.sqrt(runs) * np.sqrt(data.n)
        assert np.all(np.abs(acc - np.asarray(joint_exp)) < 4 * se + 1e-9)
        assert np.all(np.abs(acc.sum(axis=1) - np.asarray(margx_exp))
                      < 4 * se + 1e-9)

    def test_works_without_complete_pairs_when_only_single_missing(self):
        # no complete pair anywhere; marginal hot-deck still defined
        data = make_dataset([("a", 1, 1, 1, None), ("b", 1, 1, 0, None),
                             ("c", 1, 1, None, 1)], population_size=6,
                            y_categories=2)
        out = rhdi(data, RngStream(5))
        assert out.completed.is_complete
        with pytest.raises(NoDonorInformationError):
            jhdi(data, RngStream(5))


class TestJointHotDeck:
    def test_conditional_law_frequency(self):
        data = conditional_fixture(extra=[("e", 1, 1, None, 1)])
        runs = 30_000
        hits = 0
        for i in range(runs):
            out = jhdi(data, RngStream(88, i))
            hits += int(out.completed.x[4] == 1)
        se = np.sqrt((2 / 3) * (1 / 3) / runs)
        assert abs(hits / runs - 2 / 3) < 4 * se

    def test_point_mass_conditional(self):
        data = make_dataset([("a", 1, 1, 1, 0), ("b", 1, 1, 1, 0),
                             ("c", 1, 1, 0, 1), ("d", 1, 1, None, 0)],
                            population_size=8)
        for i in range(20):
            out = jhdi(data, RngStream(99, i))
            assert out.completed.x[3] == 1

    def test_mean_over_imputations_matches_tilde(self):
        data = random_fixture(8)
        tilde = tilde_estimators(data)
        runs = 4000
        acc = np.zeros(tilde.joint.shape)
        for i in range(runs):
            acc += imputed_proportions(jhdi(data, RngStream(111, i)).completed).joint
        acc /= runs
        w_max = data.weights.max()
        se = w_max / data.population_size / np.sqrt(runs) * np.sqrt(data.n)
        assert np.all(np.abs(acc - tilde.joint) < 4 * se + 1e-9)


class TestCellPopulations:
    def test_two_mr_units_structure(self):
        data = make_dataset([
            ("a", 1, 1, 0, 0), ("b", 1, 1, 1, 0),
            ("c", 1, 1, None, 0), ("d", 1, 1, None, 0),
        ], population_size=8, x_categories=2)
        pops = build_cell_populations(data)
        assert len(pops) == 1
        pop = pops[0]
        assert pop.kind == "mr" and pop.n_cells == 4 and pop.n_rows == 2
        sums = np.bincount(pop.cell_rows(), weights=pop.cell_probs)
        assert np.allclose(sums, 1.0, atol=1e-12)

    def test_mm_population_balance_vectors(self):
        data = mm_law_fixture()
        pops = build_cell_populations(data)
        assert [p.kind for p in pops] == ["mm"]
        pop = pops[0]
        est = cell_estimates(data)
        law = est.joint_cc[0].ravel()
        assert np.allclose(pop.cell_probs, law)
        t = pop.balance_vectors()
        for c in range(pop.n_cells):
            k, l = divmod(int(pop.cell_values[c]), 2)
            coord = k * 2 + l  # 0-based position of the 1-based k*L + (l+1)
            expected = np.zeros(4)
            expected[coord] = data.weights[4] * law[c]
            assert np.allclose(t[c], expected, atol=1e-15)

    def test_t_vector_definition_for_mr(self):
        data = make_dataset([("a", 2, 1, 0, 1), ("b", 2, 1, 1, 1),
                             ("c", 5, 1, None, 1)], population_size=10)
        pop = build_cell_populations(data)[0]
        est = cell_estimates(data)
        t = pop.balance_vectors()
        for c, k in enumerate(pop.cell_values):
            coord = int(k) * 2 + 1  # observed y = 1
            assert t[c, coord] == pytest.approx(
                5.0 * est.cond_x_given_y[0, int(k), 1])
            assert np.count_nonzero(t[c]) <= 1

    def test_empty_kinds_emit_no_population(self):
        data = make_dataset([("a", 1, 1, 1, 1), ("b", 1, 1, None, 1)],
                            population_size=4)
        pops = build_cell_populations(data)
        assert [p.kind for p in pops] == ["mr"]


class TestBalancedHotDeck:
    def forced_fixture(self):
        # two units missing x, both with y=0, equal weights, and
        # P(x=1 | y=0) = 1/2: the balance equations force exactly one of
        # the two to be imputed x*=1 in every realization
        return make_dataset([
            ("a", 1, 1, 0, 0), ("b", 1, 1, 1, 0),
            ("c", 1, 1, None, 0), ("d", 1, 1, None, 0),
        ], population_size=8, x_categories=2)

    def test_forced_exact_balance(self):
        data = self.forced_fixture()
        for i in range(200):
            out = bhdi(data, RngStream(123, i))
            assert out.completed.x[2] + out.completed.x[3] == 1
            assert max(out.balance_residuals.values()) <= 1e-9

    def test_zero_residual_matches_tilde_exactly(self):
        data = self.forced_fixture()
        tilde = tilde_estimators(data)
        for i in range(50):
            out = bhdi(data, RngStream(124, i))
            assert max(out.balance_residuals.values()) <= 1e-9
            got = imputed_proportions(out.completed)
            assert np.all(np.abs(got.joint - tilde.joint) <= 1e-10)
            assert np.all(np.abs(got.marginal_x - tilde.marginal_x) <= 1e-10)

    def test_balance_equation_direct_assertion(self):
        # with zero residuals, the weighted imputed count equals the
        # weighted conditional-probability total, coordinate by coordinate
        data = self.forced_fixture()
        est = cell_estimates(data)
        out = bhdi(data, RngStream(125, 9))
        assert max(out.balance_residuals.values()) <= 1e-9
        mr_idx = [2, 3]
        for k in range(2):
            got = sum(data.weights[i] * (out.completed.x[i] == k)
                      for i in mr_idx)
            want = sum(data.weights[i] * est.cond_x_given_y[0, k, 0]
                       for i in mr_idx)
            assert got == pytest.approx(want, abs=1e-10)

    def test_degenerate_laws_equal_joint_procedure(self):
        data = make_dataset([
            ("a", 1, 1, 1, 0), ("b", 1, 1, 1, 0), ("c", 1, 1, 0, 1),
            ("d", 1, 1, None, 0), ("e", 1, 1, 0, None),
        ], population_size=10)
        for i in range(20):
            a = bhdi(data, RngStream(321, i))
            b = jhdi(data, RngStream(321, i))
            assert np.array_equal(a.completed.x, b.completed.x)
            assert np.array_equal(a.completed.y, b.completed.y)

    def test_variance_far_below_joint_procedure(self, table_population,
                                                population_spec):
        from jointimpute.sampling import generate_response, srswor
        rng = RngStream(2024)
        samp = srswor(table_population, 800, rng.child(0))
        data = generate_response(samp, population_spec, rng.child(1)).masked
        reps = 60
        pb = np.array([imputed_proportions(
            bhdi(data, rng.child(2, r)).completed).joint[1, 1]
            for r in range(reps)])
        pj = np.array([imputed_proportions(
            jhdi(data, rng.child(3, r)).completed).joint[1, 1]
            for r in range(reps)])
        assert pb.var() < 0.2 * pj.var()

    def test_residuals_reported_per_population(self):
        data = random_fixture(12)
        out = bhdi(data, RngStream(11))
        pops = build_cell_populations(data)
        assert set(out.balance_residuals) == {(p.group, p.kind) for p in pops}


class TestThreeItemJointHotDeck:
    def fixture(self):
        rows = [
            ("a", 1, 1, 0, 0, 0), ("b", 1, 1, 0, 1, 1),
            ("c", 1, 1, 1, 0, 1), ("d", 1, 1, 1, 1, 2),
            ("e", 1, 1, 1, 1, 2),
        ]
        return rows

    def test_point_mass_on_missing_z(self):
        rows = self.fixture() + [("f", 1, 1, 1, 1, None)]
        data = make_dataset(rows, population_size=12, z_categories=3)
        for i in range(20):
            out = jhdi3(data, RngStream(77, i))
            assert out.completed.z[5] == 2  # only (1,1) donors have z=2

    def test_identity_on_complete_data(self):
        data = make_dataset(self.fixture(), population_size=10, z_categories=3)
        out = jhdi3(data, RngStream(1))
        assert out.completed.equals(data)

    def test_fully_missing_draws_joint_law(self):
        rows = [
            ("a", 1.0, 1, 0, 0, 0), ("b", 1.0, 1, 1, 1, 1),
            ("c", 3.0, 1, 1, 0, 1),
            ("d", 1.0, 1, None, None, None),
        ]
        data = make_dataset(rows, population_size=10, z_categories=2)
        law = {(0, 0, 0): 0.2, (1, 1, 1): 0.2, (1, 0, 1): 0.6}
        runs = 20_000
        counts = {}
        for i in range(runs):
            out = jhdi3(data, RngStream(88, i))
            key = (int(out.completed.x[3]), int(out.completed.y[3]),
                   int(out.completed.z[3]))
            counts[key] = counts.get(key, 0) + 1
        assert set(counts) <= set(law)
        for key, p in law.items():
            se = np.sqrt(p * (1 - p) / runs)
            assert abs(counts.get(key, 0) / runs - p) < 4 * se

    def test_respondents_preserved_and_flags(self):
        rows = self.fixture() + [
            ("f", 1, 1, None, 1, 1), ("g", 1, 1, 0, None, None),
        ]
        data = make_dataset(rows, population_size=14, z_categories=3)
        out = jhdi3(data, RngStream(9))
        assert out.completed.is_complete
        assert np.array_equal(out.imputed_z, data.z_missing)
        obs = ~data.x_missing
        assert np.array_equal(out.completed.x[obs], data.x[obs])

    def test_requires_z(self):
        data = make_dataset([("a", 1, 1, 1, 1)], population_size=2)
        with pytest.raises(DataError):
            jhdi3(data, RngStream(1))

    def test_no_complete_triple_raises(self):
        rows = [("a", 1, 1, 1, 1, None), ("b", 1, 1, None, 1, 1)]
        data = make_dataset(rows, population_size=4, z_categories=2)
        with pytest.raises(NoDonorInformationError):
            jhdi3(data, RngStream(1))
