import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import dag_and_p, random_dag
from dagsmooth.errors import AlignmentError, DomainError, SpecMismatch
from dagsmooth.graph import build_dag
from dagsmooth.nulldist import beta_cdf, irwin_hall_cdf
from dagsmooth.smoothing import (
    P_FLOOR,
    SmoothingSpec,
    clamp_pvalues,
    smooth,
    smooth_conservative_stouffer,
    smooth_fisher,
    smooth_generalized_mean,
    smooth_order,
    smooth_stouffer,
)

ALL_SPECS = [
    SmoothingSpec("none"),
    SmoothingSpec("fisher"),
    SmoothingSpec("fisher", weight_scheme="self_plus_children"),
    SmoothingSpec("stouffer"),
    SmoothingSpec("tippett"),
    SmoothingSpec("ruger", k=2),
    SmoothingSpec("generalized_mean", r=1.0),
    SmoothingSpec("generalized_mean", r=0.5, mc_samples=20_000, seed=3),
    SmoothingSpec("conservative_stouffer"),
    SmoothingSpec("conservative_stouffer", weight_scheme="all_descendants"),
]


def pair_graph():
    # node 0 with a single child 1: C_0 = {0, 1}
    return build_dag(2, [(0, 1)])


def star(m):
    return build_dag(m, [(0, j) for j in range(1, m)])


# ---------------------------------------------------------------- parsing and labels


@pytest.mark.parametrize(
    "text, expected",
    [
        ("none", SmoothingSpec("none")),
        ("fisher", SmoothingSpec("fisher")),
        ("fisher:children", SmoothingSpec("fisher", weight_scheme="self_plus_children")),
        ("ruger:3", SmoothingSpec("ruger", k=3)),
        ("genmean:0.5", SmoothingSpec("generalized_mean", r=0.5)),
        ("cons-stouffer", SmoothingSpec("conservative_stouffer")),
        ("cons-stouffer:descendants", SmoothingSpec("conservative_stouffer", weight_scheme="all_descendants")),
    ],
)
def test_parse(text, expected):
    spec = SmoothingSpec.parse(text)
    assert spec.method == expected.method
    assert spec.k == expected.k
    assert spec.r == expected.r
    assert spec == expected
    assert SmoothingSpec.parse(spec.label()) == spec


@pytest.mark.parametrize(
    "kwargs",
    [
        {"method": "ruger"},
        {"method": "fisher", "k": 2},
        {"method": "stouffer", "r": 0.5},
        {"method": "generalized_mean", "r": 0.0},
        {"method": "generalized_mean", "r": 1.5},
        {"method": "ruger", "k": 0},
        {"method": "bogus"},
    ],
)
def test_spec_mismatch(kwargs):
    with pytest.raises(SpecMismatch):
        SmoothingSpec(**kwargs)


def test_alignment_and_range_errors(chain3):
    with pytest.raises(AlignmentError):
        smooth(chain3, [0.1, 0.2], SmoothingSpec("fisher"))
    with pytest.raises(DomainError):
        smooth(chain3, [0.1, 0.2, 1.2], SmoothingSpec("fisher"))
    with pytest.raises(DomainError):
        smooth(chain3, [0.1, np.nan, 0.3], SmoothingSpec("stouffer"))


def test_clamping_warns(caplog):
    with caplog.at_level("WARNING"):
        out = clamp_pvalues([0.0, 0.5, 1.0])
    assert out[0] == P_FLOOR and out[2] == 1 - 1e-15
    assert "clamp" in caplog.text.lower()


# ---------------------------------------------------------------- examples


def test_none_is_identity(chain3):
    p = np.array([0.0, 0.3, 1.0])
    assert np.array_equal(smooth(chain3, p, SmoothingSpec("none")), p)


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.label())
def test_singletons_unchanged(spec):
    dag = build_dag(1)
    for p in (0.001, 0.3, 0.49):
        assert smooth(dag, [p], spec)[0] == p
    if spec.method == "conservative_stouffer":
        # a nonnegative z-sum maps to 1, including the boundary p = 0.5
        assert smooth(dag, [0.5], spec)[0] == 1.0
        assert smooth(dag, [0.9], spec)[0] == 1.0
    else:
        assert smooth(dag, [0.9], spec)[0] == 0.9


def test_dispatch_matches_direct(chain3):
    p = np.array([0.2, 0.04, 0.6])
    assert np.array_equal(smooth(chain3, p, SmoothingSpec("fisher")), smooth_fisher(chain3, p))
    assert np.array_equal(smooth(chain3, p, SmoothingSpec("stouffer")), smooth_stouffer(chain3, p))
    assert np.array_equal(smooth(chain3, p, SmoothingSpec("ruger", k=2)), smooth_order(chain3, p, 2))


def test_fisher_examples():
    dag = pair_graph()
    out = smooth_fisher(dag, [0.5, 0.5])
    assert out[0] == pytest.approx(0.5965735903, abs=1e-9)
    assert out[1] == 0.5
    assert smooth_fisher(dag, [1.0, 1.0])[0] == pytest.approx(1.0, abs=1e-12)


def test_fisher_leaf_identity_random():
    rng = np.random.default_rng(0)
    dag = random_dag(rng, 25)
    p = rng.random(25)
    out = smooth_fisher(dag, p)
    leaves = sorted(dag.leaves)
    assert np.allclose(out[leaves], p[leaves], rtol=1e-13, atol=0)


def test_fisher_matches_scipy_combine():
    rng = np.random.default_rng(4)
    dag = random_dag(rng, 20)
    p = rng.random(20)
    out = smooth_fisher(dag, p)
    for v in range(20):
        closure = dag.closures[v]
        want = stats.combine_pvalues(p[closure], method="fisher").pvalue
        assert out[v] == pytest.approx(want, rel=1e-10)


def test_stouffer_examples():
    dag = pair_graph()
    assert smooth_stouffer(dag, [0.5, 0.5])[0] == pytest.approx(0.5, abs=1e-15)
    assert smooth_stouffer(dag, [0.3, 0.7])[1] == pytest.approx(0.7, abs=1e-15)
    # mpmath oracle: Phi(2 * Phi^{-1}(0.025) / sqrt 2) = 0.00278729834...
    mpmath.mp.dps = 30
    z = -mpmath.sqrt(2) * mpmath.erfinv(mpmath.mpf("0.95"))
    oracle = float(mpmath.ncdf(2 * z / mpmath.sqrt(2)))
    assert oracle == pytest.approx(0.0027872983, abs=1e-10)
    assert smooth_stouffer(dag, [0.025, 0.025])[0] == pytest.approx(oracle, abs=1e-12)


def test_tippett_and_ruger_examples():
    dag = star(3)
    assert smooth_order(dag, [0.5, 0.1, 0.8], 1)[0] == pytest.approx(1 - 0.9**3, abs=1e-14)
    assert smooth_order(dag, [0.5, 0.1, 0.8], 1)[1] == 0.1
    dag5 = star(5)
    p = [0.6, 0.3, 0.1, 0.9, 0.7]
    assert smooth_order(dag5, p, 2)[0] == pytest.approx(beta_cdf(0.3, 2, 4), abs=1e-15)
    # exact binomial tail: P(Bin(5, 0.3) >= 2) = 0.47178
    assert beta_cdf(0.3, 2, 4) == pytest.approx(0.47178, abs=1e-12)


def test_ruger_k_clamped_per_node(chain3):
    p = np.array([0.2, 0.5, 0.4])
    out = smooth_order(chain3, p, 5)
    # the leaf has |C| = 1 so k becomes 1; the middle node uses k = 2 of 2
    assert out[2] == 0.4
    assert out[1] == pytest.approx(0.5**2, abs=1e-15)
    assert out[0] == pytest.approx(0.5**3, abs=1e-15)


def test_generalized_mean_examples():
    dag = pair_graph()
    assert smooth_generalized_mean(dag, [0.5, 0.5], 1.0)[0] == pytest.approx(0.5, abs=1e-14)
    assert smooth_generalized_mean(dag, [0.5, 0.7], 1.0)[1] == 0.7
    d3 = star(3)
    assert smooth_generalized_mean(d3, [0.1, 0.2, 0.3], 1.0)[0] == pytest.approx(irwin_hall_cdf(0.6, 3))


def test_generalized_mean_monte_carlo_against_fresh_estimate():
    dag = star(3)
    p = np.array([0.1, 0.2, 0.3])
    got = smooth_generalized_mean(dag, p, 0.5, mc_samples=200_000, seed=7)[0]
    rng = np.random.default_rng(2024)
    n = 1_000_000
    fresh = np.mean((rng.random((n, 3)) ** 0.5).sum(axis=1) <= (p**0.5).sum())
    se = np.sqrt(fresh * (1 - fresh) / n) + np.sqrt(fresh * (1 - fresh) / 200_000)
    assert abs(got - fresh) <= 3 * se


def test_generalized_mean_large_closure_uses_monte_carlo():
    dag = star(45)
    rng = np.random.default_rng(1)
    p = rng.random(45)
    a = smooth_generalized_mean(dag, p, 1.0, mc_samples=20_000, seed=1)
    b = smooth_generalized_mean(dag, p, 1.0, mc_samples=20_000, seed=1)
    assert np.array_equal(a, b)
    approx = stats.norm.cdf(p.sum(), loc=22.5, scale=np.sqrt(45 / 12))
    assert a[0] == pytest.approx(approx, abs=0.02)


def test_conservative_stouffer_examples():
    leaf = build_dag(1)
    assert smooth_conservative_stouffer(leaf, [0.3])[0] == 0.3
    assert smooth_conservative_stouffer(leaf, [0.7])[0] == 1.0
    assert smooth_conservative_stouffer(pair_graph(), [0.5, 0.5])[0] == 1.0


def test_conservative_stouffer_weight_schemes(chain3):
    p = np.array([0.2, 0.1, 0.05])
    z = stats.norm.ppf(p)
    children = smooth_conservative_stouffer(chain3, p, "self_plus_children")
    desc = smooth_conservative_stouffer(chain3, p, "all_descendants")
    assert children[0] == pytest.approx(stats.norm.cdf(z[:2].mean()), rel=1e-12)
    assert desc[0] == pytest.approx(stats.norm.cdf(z.mean()), rel=1e-12)


# ---------------------------------------------------------------- properties


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.label())
@settings(max_examples=60, deadline=None)
@given(data=dag_and_p(max_nodes=9), node=st.integers(0, 8), bump=st.floats(0.0, 1.0))
def test_monotone_and_in_range(spec, data, node, bump):
    dag, p = data
    node %= dag.node_count
    q = p.copy()
    q[node] = p[node] + (1 - p[node]) * bump
    a = smooth(dag, p, spec, warn=False)
    b = smooth(dag, q, spec, warn=False)
    assert np.all((a >= 0) & (a <= 1))
    assert np.all(b >= a - 1e-12)


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.label())
def test_deterministic_and_batch_consistent(spec):
    rng = np.random.default_rng(8)
    dag = random_dag(rng, 15)
    batch = rng.random((4, 15))
    whole = smooth(dag, batch, spec, warn=False)
    again = smooth(dag, batch, spec, warn=False)
    assert np.array_equal(whole, again)
    for row, out in zip(batch, whole):
        assert np.array_equal(smooth(dag, row, spec, warn=False), out)


@pytest.mark.parametrize(
    "spec",
    [
        SmoothingSpec("fisher"),
        SmoothingSpec("stouffer"),
        SmoothingSpec("tippett"),
        SmoothingSpec("ruger", k=2),
        SmoothingSpec("generalized_mean", r=1.0),
        SmoothingSpec("conservative_stouffer"),
    ],
    ids=lambda s: s.label(),
)
def test_superuniform_under_global_null(spec):
    rng = np.random.default_rng(31)
    dag = random_dag(rng, 12)
    n = 200_000
    out = smooth(dag, rng.random((n, 12)), spec, warn=False)
    for c in (0.01, 0.05, 0.1, 0.25, 0.5):
        assert np.all(np.mean(out <= c, axis=0) <= c + 3 * np.sqrt(c * (1 - c) / n))
