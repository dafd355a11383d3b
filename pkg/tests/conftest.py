import numpy as np
import pytest
from hypothesis import strategies as st

from dagsmooth.graph import build_dag


def random_dag(rng, n, edge_prob=0.15, max_parents=None):
    """Random DAG on a shuffled vertex order, so indices are not topological."""
    perm = rng.permutation(n)
    edges = []
    for j in range(n):
        cands = [i for i in range(j) if rng.random() < edge_prob]
        if max_parents is not None and len(cands) > max_parents:
            cands = rng.choice(cands, max_parents, replace=False).tolist()
        edges += [(int(perm[i]), int(perm[j])) for i in cands]
    return build_dag(n, edges)


def random_upward_closed(rng, dag, keep=0.5):
    mask = np.zeros(dag.node_count, dtype=bool)
    for v in dag.topo_order:
        if all(mask[u] for u in dag.parents_of[v]) and rng.random() < keep:
            mask[v] = True
    return mask


@st.composite
def dags(draw, min_nodes=1, max_nodes=12):
    n = draw(st.integers(min_nodes, max_nodes))
    pairs = [(i, j) for j in range(n) for i in range(j)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=3 * n)) if pairs else []
    perm = draw(st.permutations(range(n)))
    return build_dag(n, [(perm[i], perm[j]) for i, j in chosen])


@st.composite
def dag_and_p(draw, min_nodes=1, max_nodes=12):
    dag = draw(dags(min_nodes, max_nodes))
    p = draw(
        st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=dag.node_count, max_size=dag.node_count)
    )
    return dag, np.array(p)


@pytest.fixture
def chain3():
    return build_dag(3, [(0, 1), (1, 2)])


@pytest.fixture
def diamond():
    return build_dag(4, [(0, 1), (0, 2), (1, 3), (2, 3)])
