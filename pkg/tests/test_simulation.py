import numpy as np
import pytest
from scipy import stats

from dagsmooth.errors import ConfigError, InvalidRecipe
from dagsmooth.graph import TruthAssignment, build_dag
from dagsmooth.simulation import (
    ALPHA_GRID,
    AlternativeScheme,
    BenchmarkConfig,
    GraphRecipe,
    compute_metrics,
    copula_null_covariance,
    gen_graph,
    gen_pvalues_copula,
    gen_pvalues_independent,
    gen_truth,
    run_benchmark,
    trigenic_graph,
)
from dagsmooth.smoothing import SmoothingSpec


# ---------------------------------------------------------------- graphs


def test_deep_tree_eight_levels():
    dag = gen_graph(GraphRecipe("deep_tree"))
    assert dag.node_count == 255
    assert len(dag.edges) == 254
    assert dag.max_depth == 8
    for v in range(255):
        assert len(dag.children_of[v]) in (0, 2)
    assert len(dag.leaves) == 128


def test_wide_tree():
    dag = gen_graph(GraphRecipe("wide_tree"))
    assert dag.node_count == 1 + 20 + 400


def test_bipartite():
    dag = gen_graph(GraphRecipe("bipartite", seed=1))
    assert dag.node_count == 200
    assert len(dag.edges) == 2000
    for r in range(100):
        assert len(dag.children_of[r]) == 20
    assert dag.roots == set(range(100)) | {v for v in range(100, 200) if not dag.parents_of[v]}


def test_hourglass_is_connected_per_layer():
    for seed in range(20):
        dag = gen_graph(GraphRecipe("hourglass", {"edge_prob": 0.02}, seed=seed))
        assert dag.node_count == 70
        for r in range(30):
            assert dag.children_of[r]
        for m in range(30, 40):
            assert dag.parents_of[m] and dag.children_of[m]
        for leaf in range(40, 70):
            assert dag.parents_of[leaf]


def test_layered_random():
    dag = gen_graph(GraphRecipe("layered_random", seed=3))
    assert dag.node_count == 250
    assert dag.max_depth == 5
    assert all(len(dag.parents_of[v]) == 3 for v in range(50, 250))


def test_trigenic():
    dag, labels = trigenic_graph(["a", "b", "c"], [("a", "b"), ("b", "c"), ("a", "c")], [("a", "b", "c")])
    assert labels == ["a", "b", "c", "a|b", "b|c", "a|c", "a|b|c"]
    assert len(dag.parents_of[6]) == 3
    assert dag.parents_of[3] == (0, 1)
    with pytest.raises(InvalidRecipe):
        trigenic_graph(["a"], [("a", "z")], [])


def test_recipe_validation():
    with pytest.raises(InvalidRecipe):
        GraphRecipe("moebius")
    with pytest.raises(InvalidRecipe):
        GraphRecipe("deep_tree", {"width": 3})
    with pytest.raises(InvalidRecipe):
        gen_graph(GraphRecipe("bipartite", {"fan_out": 200}, seed=0))


def test_random_recipes_reproducible():
    a = gen_graph(GraphRecipe("hourglass", seed=4))
    b = gen_graph(GraphRecipe("hourglass", seed=4))
    assert a == b


# ---------------------------------------------------------------- truth


def test_truth_extremes():
    dag = gen_graph(GraphRecipe("deep_tree", {"depth": 4}))
    rng = np.random.default_rng(0)
    for kind in ("global_normal", "incremental_normal"):
        assert not gen_truth(dag, AlternativeScheme(kind, nonnull_prob=0.0), rng).nonnull.any()
        assert gen_truth(dag, AlternativeScheme(kind, nonnull_prob=1.0), rng).nonnull.all()


def test_incremental_closes_chain(chain3):
    # the only leaf is a signal with probability 1, so the whole chain is
    truth = gen_truth(chain3, AlternativeScheme("incremental_normal", nonnull_prob=1.0), 0)
    assert truth.nonnull.tolist() == [True, True, True]


def test_truth_always_upward_closed():
    rng = np.random.default_rng(1)
    dag = gen_graph(GraphRecipe("hourglass", seed=2))
    for name in ("global", "incremental", "global_beta", "incremental_beta"):
        for _ in range(20):
            truth = gen_truth(dag, AlternativeScheme.named(name), rng)
            assert dag.is_upward_closed(truth.nonnull)


def test_depth_beta_truth():
    dag = gen_graph(GraphRecipe("deep_tree", {"depth": 4}))
    truth = gen_truth(dag, AlternativeScheme("depth_beta", nonnull_depths=(1, 2)), 0)
    assert truth.signals.tolist() == [0, 1, 2]


# ---------------------------------------------------------------- p-values


def test_independent_null_pvalues_uniform_and_uncorrelated():
    dag = build_dag(2, [(0, 1)])
    truth = TruthAssignment([False, False])
    rng = np.random.default_rng(5)
    trials = 100_000
    draws = np.array([gen_pvalues_independent(dag, truth, AlternativeScheme(), rng) for _ in range(trials)])
    assert stats.kstest(draws[:, 0], "uniform").pvalue > 0.01
    assert abs(np.corrcoef(draws.T)[0, 1]) < 4 / np.sqrt(trials)


def test_forced_noise_hook():
    dag = build_dag(1)
    truth = TruthAssignment([True])
    # mean shift 2 plus zero noise gives z = 2
    p = gen_pvalues_independent(dag, truth, AlternativeScheme(), 0, noise=[0.0])
    assert p[0] == pytest.approx(stats.norm.sf(2.0), abs=1e-15)
    assert p[0] == pytest.approx(0.02275013194817921, abs=1e-15)


def test_copula_covariance_examples():
    chain = build_dag(2, [(0, 1)])
    cov = copula_null_covariance(chain, TruthAssignment([False, False]))
    assert cov.tolist() == [[1.0, 1.0], [1.0, 2.0]]
    vee = build_dag(3, [(0, 2), (1, 2)])
    cov = copula_null_covariance(vee, TruthAssignment([False, False, False]))
    assert cov[2, 2] == pytest.approx(1.5)
    assert cov[0, 1] == 0.0
    flat = copula_null_covariance(build_dag(3), TruthAssignment([False] * 3))
    assert np.array_equal(flat, np.eye(3))


def test_copula_covariance_matches_simulation():
    dag = gen_graph(GraphRecipe("layered_random", {"layers": 3, "width": 4, "n_parents": 2}, seed=1))
    truth = TruthAssignment(np.zeros(12, dtype=bool))
    cov = copula_null_covariance(dag, truth)
    rng = np.random.default_rng(2)
    eps = rng.standard_normal((200_000, 12))
    z = np.zeros_like(eps)
    for v in dag.topo_order:
        ps = list(dag.parents_of[v])
        z[:, v] = (z[:, ps].mean(axis=1) if ps else 0.0) + eps[:, v]
    assert np.allclose(np.cov(z.T), cov, atol=0.03)


def test_copula_nulls_uniform_and_positively_correlated():
    dag = build_dag(2, [(0, 1)])
    truth = TruthAssignment([False, False])
    rng = np.random.default_rng(8)
    draws = np.array([gen_pvalues_copula(dag, truth, AlternativeScheme(), rng) for _ in range(100_000)])
    assert stats.kstest(draws[:, 1], "uniform").pvalue > 0.01
    assert stats.kstest(draws[:, 0], "uniform").pvalue > 0.01
    assert np.corrcoef(draws.T)[0, 1] > 0.5


def test_copula_without_edges_is_independent():
    dag = build_dag(3)
    truth = TruthAssignment([False] * 3)
    rng = np.random.default_rng(9)
    draws = np.array([gen_pvalues_copula(dag, truth, AlternativeScheme(), rng) for _ in range(20_000)])
    corr = np.corrcoef(draws.T)
    assert np.all(np.abs(corr[np.triu_indices(3, 1)]) < 4 / np.sqrt(20_000))


# ---------------------------------------------------------------- metrics


def test_metrics_examples():
    truth = TruthAssignment(np.array([True] * 8 + [False] * 4))
    empty = compute_metrics(np.zeros(12, dtype=bool), truth)
    assert empty.fdp == 0.0 and not empty.any_false
    exact = compute_metrics(truth.nonnull.copy(), truth)
    assert exact.power == 1.0 and exact.fdp == 0.0
    mask = np.zeros(12, dtype=bool)
    mask[:10] = True
    m = compute_metrics(mask, truth, gamma=0.1)
    assert m.fdp == pytest.approx(0.2)
    assert m.any_false and m.fdp_exceeds_gamma
    assert m.power == 1.0


# ---------------------------------------------------------------- benchmark


def test_single_trial_single_node():
    config = BenchmarkConfig(
        recipes=(GraphRecipe("edgeless", {"n": 1}),),
        schemes=(AlternativeScheme("global_normal", nonnull_prob=1.0, mean=40.0),),
        smoothings=(SmoothingSpec("none"),),
        selectors=("bh",),
        alphas=(0.05,),
        trials=1,
    )
    (cell,) = run_benchmark(config)
    assert cell.power == 1.0
    assert cell.err_fdr == 0.0


def test_benchmark_config_validation():
    base = dict(
        recipes=(GraphRecipe("chain"),),
        schemes=(AlternativeScheme(),),
        smoothings=(SmoothingSpec("none"),),
        selectors=("bh",),
    )
    with pytest.raises(ConfigError):
        BenchmarkConfig(**base, trials=0).validate()
    with pytest.raises(ConfigError):
        BenchmarkConfig(**{**base, "selectors": ("nope",)}).validate()
    with pytest.raises(ConfigError):
        BenchmarkConfig(**base, null_model="t-copula").validate()


def test_all_null_mg_fwer_within_bound():
    config = BenchmarkConfig(
        recipes=(GraphRecipe("deep_tree", {"depth": 5}),),
        schemes=(AlternativeScheme.named("null"),),
        smoothings=(SmoothingSpec("none"), SmoothingSpec("fisher")),
        selectors=("fwer-mg",),
        alphas=(0.05,),
        trials=500,
        seed=3,
    )
    for cell in run_benchmark(config):
        assert cell.err_fwer <= 0.05 + 3 * np.sqrt(0.05 * 0.95 / 500)


def test_smoothed_dagger_beats_unsmoothed_on_deep_tree():
    config = BenchmarkConfig(
        recipes=(GraphRecipe("deep_tree"),),
        schemes=(AlternativeScheme.named("global"),),
        smoothings=(SmoothingSpec("none"), SmoothingSpec("fisher")),
        selectors=("fdr-dagger",),
        trials=100,
        seed=11,
    )
    cells = {(c.smoothing, c.alpha): c.power for c in run_benchmark(config)}
    for a in ALPHA_GRID:
        assert cells[("fisher", a)] > cells[("none", a)]


def test_benchmark_bit_reproducible_and_worker_independent(monkeypatch):
    config = BenchmarkConfig(
        recipes=(GraphRecipe("hourglass"), GraphRecipe("chain")),
        schemes=(AlternativeScheme.named("global"), AlternativeScheme.named("incremental_beta")),
        smoothings=(SmoothingSpec("none"), SmoothingSpec("stouffer")),
        selectors=("fwer-mg", "fdx", "fdr-dagger", "bh"),
        alphas=(0.05, 0.2),
        trials=12,
        seed=5,
    )
    a = run_benchmark(config)
    b = run_benchmark(config)
    monkeypatch.setenv("DAGSMOOTH_THREADS", "3")
    c = run_benchmark(config)
    assert a == b == c
    for x, y in zip(a, c):
        assert np.array_equal(x.per_trial, y.per_trial)


def test_regenerate_graph_mode_runs():
    config = BenchmarkConfig(
        recipes=(GraphRecipe("bipartite", {"n_roots": 10, "n_leaves": 10, "fan_out": 3}),),
        schemes=(AlternativeScheme.named("global"),),
        smoothings=(SmoothingSpec("fisher"),),
        selectors=("fdr-dagger",),
        alphas=(0.1,),
        trials=5,
        regenerate_graph=True,
    )
    (cell,) = run_benchmark(config)
    assert 0.0 <= cell.power <= 1.0
