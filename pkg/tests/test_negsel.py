import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import oracle_layout, random_rows, tiny_schema
from hybrid_ids.detectors import (
    UNSPECIFIED,
    Detector,
    count_self_matches,
    is_valid,
    matches,
    random_detector,
)
from hybrid_ids.errors import EmptyDataError
from hybrid_ids.negsel import (
    GaConfig,
    ObjectiveStats,
    Population,
    SelfIndex,
    crowding_step,
    fitness,
    fitness_ratio,
    generate_detectors,
    mutate,
    purge,
    raw_objectives,
    uniform_crossover,
)

U = UNSPECIFIED
TINY = tiny_schema()


class TestObjectives:
    def test_extremes(self):
        rows = random_rows(TINY, 30, np.random.default_rng(1))
        assert raw_objectives(Detector([U] * 4), rows, TINY) == (1.0, 30)

    def test_detector_matching_nothing(self):
        rows = np.array([[0, 0, 0], [1, 0, 3]])
        assert raw_objectives(Detector([2, U, U, U]), rows, TINY)[1] == 0

    def test_self_index_matches_brute_force(self, fitted_schema, synth_encoded):
        normal = synth_encoded[0].values[synth_encoded[0].label_mask("normal")]
        index = SelfIndex(normal, fitted_schema)
        rng = np.random.default_rng(3)
        lay = oracle_layout(fitted_schema)
        rows = normal.tolist()
        for _ in range(40):
            d = random_detector(fitted_schema, rng)
            expected = oracles.count_matches(d.genes, rows, lay)
            assert index.count(d) == expected
            assert count_self_matches(d, normal, fitted_schema) == expected


class TestFitness:
    def test_ratio_substitution(self):
        assert fitness_ratio(5, 2, 10) == 0.375

    def test_ratio_at_min(self):
        assert fitness_ratio(2, 2, 10) == 0.0

    def test_ratio_degenerate(self):
        assert fitness_ratio(4, 4, 4) == 0.0

    @given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(0, 1))
    def test_ratio_range(self, a, b, t):
        lo, hi = sorted([a, b])
        obj = lo + t * (hi - lo)
        assert 0.0 <= fitness_ratio(min(max(obj, lo), hi), lo, hi) <= 1.0

    def _stats_for(self, fr1, fr2):
        # population ranges [0, 1] so the ratios equal the raw values
        return ObjectiveStats(0.0, 1.0, 0.0, 1.0), fr1, fr2

    @pytest.mark.parametrize("fr1, fr2, w1, w2, expected", [
        (0.8, 0.2, 0.6, 0.4, 0.40),
        (1.0, 1.0, 0.5, 0.5, 0.0),
        (0.0, 1.0, 0.3, 0.7, -0.7),
        (0.0, 1.0, 0.9, 0.1, -0.1),
    ])
    def test_weighted_ratios(self, fr1, fr2, w1, w2, expected):
        stats, o1, o2 = self._stats_for(fr1, fr2)
        assert fitness(o1, o2, stats, w1, w2) == pytest.approx(expected, abs=1e-9)

    @settings(max_examples=200)
    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1),
           st.floats(0, 1))
    def test_raising_w1_keeps_winner_on_equal_penalty(self, a1, b1, fr2, w1, bump):
        stats = ObjectiveStats(0.0, 1.0, 0.0, 1.0)
        hi1, lo1 = max(a1, b1), min(a1, b1)
        w1b = w1 + (1 - w1) * bump
        if fitness(hi1, fr2, stats, w1, 1 - w1) > fitness(lo1, fr2, stats, w1, 1 - w1):
            assert fitness(hi1, fr2, stats, w1b, 1 - w1b) > fitness(lo1, fr2, stats, w1b, 1 - w1b)


class TestConfig:
    def test_default_settings(self):
        cfg = GaConfig()
        assert (cfg.population_size, cfg.iterations, cfg.crossover_rate) == (1600, 50000, 1.0)
        assert cfg.effective_mutation_rate(28) == 1 / 28

    def test_weights_must_sum_to_one(self):
        GaConfig(w1=0.6, w2=0.4)
        with pytest.raises(ValueError):
            GaConfig(w1=0.6, w2=0.6)

    def test_bad_rates(self):
        with pytest.raises(ValueError):
            GaConfig(mutation_rate=1.5)
        with pytest.raises(ValueError):
            GaConfig(children_per_step=3)


class TestVariation:
    def test_identical_parents(self):
        d = Detector([1, 0, 2, 7])
        assert uniform_crossover(d, d, np.random.default_rng(0), TINY) == d

    def test_child_genes_come_from_parents(self):
        rng = np.random.default_rng(4)
        a, b = Detector([0, 1, 2, 4]), Detector([2, 0, 6, 9])
        for _ in range(200):
            c = uniform_crossover(a, b, rng, TINY)
            assert all(g in (x, y) for g, x, y in zip(c.genes[:2], a.genes[:2], b.genes[:2]))
            # interval bounds may be swapped back into order by repair
            assert set(c.genes[2:]) <= {2, 4, 6, 9}
            assert c.genes[2] <= c.genes[3]

    def test_gene_origin_frequency(self):
        rng = np.random.default_rng(8)
        a, b = Detector([0, 0, 0, 0]), Detector([1, 1, 9, 9])
        n = 20_000
        from_a = np.zeros(4)
        for _ in range(n):
            c = uniform_crossover(a, b, rng, TINY)
            from_a[:2] += np.array(c.genes[:2]) == 0
        assert np.all(np.abs(from_a[:2] / n - 0.5) < 0.015)

    def test_mutation_rate_zero(self):
        d = Detector([1, 0, 2, 7])
        assert mutate(d, 0.0, np.random.default_rng(0), TINY) == d

    def test_mutation_unspecified_share(self):
        # single-value genes only: repair never interferes
        rng = np.random.default_rng(2)
        n = 20_000
        unspec = np.zeros(2)
        for _ in range(n):
            m = mutate(Detector([1, 0, 2, 7]), 1.0, rng, TINY)
            unspec += np.array(m.genes[:2]) == U
        assert np.all(np.abs(unspec / n - 0.5) < 0.015)

    def test_mutated_detectors_valid(self, fitted_schema):
        rng = np.random.default_rng(6)
        for _ in range(500):
            d = mutate(random_detector(fitted_schema, rng), 0.3, rng, fitted_schema)
            assert is_valid(d, fitted_schema)


class TestCrowding:
    @pytest.mark.parametrize("children", [1, 2])
    def test_replacements_only_when_strictly_fitter(self, children):
        rng = np.random.default_rng(10)
        rows = random_rows(TINY, 60, rng)
        cfg = GaConfig(population_size=12, iterations=0, w1=0.7, w2=0.3, mutation_rate=0.25,
                       children_per_step=children)
        pop = Population.evaluate([random_detector(TINY, rng) for _ in range(12)], rows, TINY)
        for _ in range(300):
            before = list(pop.detectors)
            result = crowding_step(pop, rows, cfg, rng, TINY)
            assert len(pop) == 12
            changed = [i for i in range(12) if pop.detectors[i] != before[i]]
            assert set(changed) <= {r.slot for r in result.replacements}
            assert set(changed) <= set(result.parents)
            for r in result.replacements:
                assert r.child_fitness > r.parent_fitness
            if not result.replacements:
                assert pop.detectors == before
            for d, o1, o2 in zip(pop.detectors, pop.obj1, pop.obj2):
                assert (o1, o2) == pytest.approx(raw_objectives(d, rows, TINY))

    def test_unfit_child_leaves_population(self):
        # both parents match no self record and are maximally general for that;
        # any child of theirs is no fitter than the nearer parent
        rows = np.array([[0, 0, 0]] * 5)
        good = Detector([1, U, U, U])
        cfg = GaConfig(population_size=2, iterations=0, w1=0.5, w2=0.5, mutation_rate=0.0)
        pop = Population.evaluate([good, good], rows, TINY)
        result = crowding_step(pop, rows, cfg, np.random.default_rng(0), TINY)
        assert result.replacements == []
        assert pop.detectors == [good, good]

    def test_fitter_child_replaces_nearer_parent(self):
        rows = np.array([[0, 0, 0]] * 5)
        cfg = GaConfig(population_size=2, iterations=0, w1=0.5, w2=0.5, mutation_rate=0.0)
        a, b = Detector([0, U, U, U]), Detector([2, 0, 1, 3])
        # parents (0, 1), gate passes, mask takes protocol from b and the rest
        # from a, no mutation hits: child is [2, -1, -1, -1]
        draws = [0.0, 0.0, 0.0, 0.9, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]
        pop = Population.evaluate([a, b], rows, TINY)
        result = crowding_step(pop, rows, cfg, oracles.ScriptedRandom(draws), TINY)
        assert result.parents == (0, 1)
        assert [r.slot for r in result.replacements] == [0]
        assert result.replacements[0].child_fitness == pytest.approx(0.5)
        assert result.replacements[0].parent_fitness == pytest.approx(0.0)
        assert pop.detectors == [Detector([2, U, U, U]), b]

    def test_matches_hand_trace(self):
        rng = np.random.default_rng(21)
        rows = random_rows(TINY, 30, rng)
        start = [random_detector(TINY, rng) for _ in range(4)]
        draws = rng.random(2000).tolist()
        lay = oracle_layout(TINY)
        expected_pop, expected_steps = oracles.crowding_trace(
            [d.genes for d in start], draws, rows.tolist(), lay, 0.6, 0.4, 0.3, 20)
        cfg = GaConfig(population_size=4, iterations=0, w1=0.6, w2=0.4, mutation_rate=0.3)
        pop = Population.evaluate(start, rows, TINY)
        scripted = oracles.ScriptedRandom(draws)
        for parents, slot, cf, pf in expected_steps:
            result = crowding_step(pop, rows, cfg, scripted, TINY)
            assert result.parents == parents
            assert [r.slot for r in result.replacements] == ([] if slot is None else [slot])
        assert [list(d.genes) for d in pop.detectors] == expected_pop


class TestPurgeAndGenerate:
    def test_purge_examples(self):
        rows = np.array([[0, 0, 3], [1, 1, 8]])
        hit = Detector([0, U, U, U])
        miss = Detector([2, U, U, U])
        assert purge([hit, miss], rows, TINY) == [miss]

    def test_purge_count(self):
        rng = np.random.default_rng(12)
        rows = random_rows(TINY, 40, rng)
        ds = [random_detector(TINY, rng) for _ in range(200)]
        lay = oracle_layout(TINY)
        bad = sum(1 for d in ds if oracles.count_matches(d.genes, rows.tolist(), lay) > 0)
        kept = purge(ds, rows, TINY)
        assert len(kept) == len(ds) - bad
        assert not any(matches(d, r, TINY) for d in kept for r in rows.tolist())

    def test_empty_self_set(self, fitted_schema):
        with pytest.raises(EmptyDataError):
            generate_detectors(np.zeros((0, 18), dtype=np.int16), fitted_schema, GaConfig())

    def test_generate_is_deterministic_and_purged(self, fitted_schema, synth_encoded):
        train = synth_encoded[0]
        normal = train.values[train.label_mask("normal")]
        cfg = GaConfig(population_size=60, iterations=800, w1=0.6, w2=0.4, seed=5)
        a, log_a = generate_detectors(normal[:300], fitted_schema, cfg, purge_values=normal,
                                      log_every=200)
        b, log_b = generate_detectors(normal[:300], fitted_schema, cfg, purge_values=normal,
                                      log_every=200)
        assert a.dumps() == b.dumps()
        assert log_a == log_b
        assert [row[0] for row in log_a] == [0, 200, 400, 600, 800]
        assert a.schema_digest == fitted_schema.digest
        assert a.meta["seed"] == 5 and a.meta["weights"] == [0.6, 0.4]
        for d in a:
            assert count_self_matches(d, normal, fitted_schema) == 0
