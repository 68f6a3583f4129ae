import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from qgrid.notebook import (
    EmptyInstruction,
    SimilarityConfig,
    notebook_init,
    notebook_insert,
    similarity,
    task_set,
)
from qgrid.query_lang import tokenize

V0 = tokenize("find mary's toy")


def test_init():
    nb = notebook_init(V0)
    assert len(nb) == 1 and task_set(nb) == {V0}
    with pytest.raises(EmptyInstruction):
        notebook_init(())


def test_similarity_examples():
    assert similarity(V0, tokenize("mary's toy is the red ball")) == pytest.approx(2 / 3)
    assert similarity(V0, V0) == 1.0
    assert similarity(V0, tokenize("the danger zone is yellow")) == 0.0
    assert similarity(tokenize("the is"), V0) == 0.0


def test_insert_examples():
    nb = notebook_insert(notebook_init(V0), tokenize("mary's toy is the red ball"))
    assert nb.partition() == {frozenset({V0, tokenize("mary's toy is the red ball")})}
    nb = notebook_insert(notebook_init(V0), tokenize("the danger zone is yellow"))
    assert nb.partition() == {frozenset({V0}), frozenset({tokenize("the danger zone is yellow")})}
    assert task_set(nb) == {V0}
    with pytest.raises(ValueError):
        notebook_insert(nb, ())


def test_bridge_merges_into_minimum_index():
    a, b = tokenize("red ball"), tokenize("grey box")
    nb = notebook_insert(notebook_init(a), b)
    assert len(nb) == 2
    nb = notebook_insert(nb, tokenize("the red ball is in the grey box"))
    assert len(nb) == 1 and a in nb.sets[0] and b in nb.sets[0]


def test_ordered_task_notes_instruction_first():
    v1 = tokenize("mary's toy is the red ball")
    v2 = tokenize("the red ball is in the grey box")
    nb = notebook_insert(notebook_insert(notebook_init(V0), v1), v2)
    assert nb.ordered_task_notes() == [V0, v1, v2]


def test_bigram_config():
    cfg = SimilarityConfig(n=2)
    assert similarity(V0, tokenize("mary's toy is the red ball"), cfg) == pytest.approx(1 / 2)
    with pytest.raises(ValueError):
        SimilarityConfig(n=3)
    with pytest.raises(ValueError):
        SimilarityConfig(alpha=1.5)


WORDS = ["red", "ball", "box", "grey", "mary's", "toy", "key", "door", "zone", "danger", "the", "is"]
utterances = st.lists(st.sampled_from(WORDS), min_size=1, max_size=4).map(tuple)


def components(nodes, cfg):
    """Brute-force connected components of the similarity graph."""
    parent = {u: u for u in nodes}

    def find(u):
        while parent[u] != u:
            u = parent[u]
        return u

    for u, v in itertools.combinations(nodes, 2):
        if similarity(u, v, cfg) >= cfg.alpha:
            parent[find(u)] = find(v)
    groups = {}
    for u in nodes:
        groups.setdefault(find(u), set()).add(u)
    return frozenset(frozenset(g) for g in groups.values())


@settings(max_examples=200, deadline=None)
@given(utterances, st.lists(utterances, max_size=11), st.sampled_from([1, 2]), st.sampled_from([0.3, 0.5, 1.0]))
def test_partition_is_similarity_components(v0, seq, n, alpha):
    cfg = SimilarityConfig(n=n, alpha=alpha)
    nb = notebook_init(v0)
    sizes = [1]
    for v in seq:
        nb = notebook_insert(nb, v, cfg)
        members = [u for s in nb.sets for u in s]
        assert len(members) == len(set(members))  # disjoint
        assert v0 in nb.task_set
        sizes.append(len(nb.task_set))
    assert sizes == sorted(sizes)  # A_0 never shrinks
    assert nb.partition() == components({v0, *seq}, cfg)


def test_partition_independent_of_order():
    rng = random.Random(0)
    base = [tokenize(t) for t in ["red ball", "grey box", "the red ball is in the grey box", "danger zone",
                                  "the danger zone is yellow", "key door"]]
    ref = None
    for _ in range(20):
        seq = base[:]
        rng.shuffle(seq)
        nb = notebook_init(V0)
        for v in seq:
            nb = notebook_insert(nb, v)
        part = nb.partition() - {frozenset({V0})}
        part = frozenset(s - {V0} for s in nb.partition())
        ref = ref or part
        assert part == ref
