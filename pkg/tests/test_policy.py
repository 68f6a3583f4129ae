import numpy as np
import pytest
import torch

from qgrid.env import compose, reset
from qgrid.policy import (
    AgentVariant,
    FiLM,
    MissingCheckpoint,
    Policy,
    PolicyConfig,
    PolicyOutput,
    SampledActions,
    ShapeMismatch,
    VersionMismatch,
    act,
    load_checkpoint,
    log_prob,
    make_batch,
    pointer_distribution,
    policy_notes,
    sample_actions,
    save_checkpoint,
)
from qgrid.query_lang import DEFAULT_VOCAB, Query, tokenize

V0 = tokenize("find mary's toy")
V1 = tokenize("mary's toy is the red ball")


def _view(seed=0):
    _, obs, _ = reset(compose("box"), np.random.default_rng(seed))
    return obs.view


@pytest.fixture(params=["lite", "paper"])
def profile(request):
    return request.param


def _policy(profile="lite", variant=AgentVariant.AFK, hidden=16, seed=0):
    torch.manual_seed(seed)
    return Policy(PolicyConfig(profile=profile, hidden=hidden, variant=variant))


def test_note_encoding_shapes(profile):
    p = _policy(profile)
    (h,) = p.note_encodings([V0])
    assert h.shape == (3, 16)
    h3, h5 = p.note_encodings([V0, tokenize("the red ball is in the grey box")])
    assert h3.shape == (3, 16) and h5.shape == (8, 16)
    a, b = p.note_encodings([V0, V0])
    assert torch.equal(a, b)


def test_pool_notes_invariances(profile):
    p = _policy(profile)
    s = torch.randn(1, 4, 16)
    mask = torch.ones(1, 4, dtype=torch.bool)
    perm = torch.tensor([2, 0, 3, 1])
    assert torch.allclose(p.pool_notes(s, mask), p.pool_notes(s[:, perm], mask), atol=1e-6)
    one = s[:, :1]
    expected = p.set_pool.rho(p.set_pool.phi(one[:, 0]))
    assert torch.allclose(p.pool_notes(one, mask[:, :1]), expected, atol=1e-6)
    dup = torch.cat([one, one], dim=1)
    summed = (p.set_pool.phi(dup)).sum(1)
    assert torch.allclose(summed, 2 * p.set_pool.phi(one[:, 0]), atol=1e-6)


def test_encode_observation(profile):
    p = _policy(profile)
    v = torch.from_numpy(_view().astype(np.int64))[None]
    assert torch.equal(p.encode_observation(v), p.encode_observation(v))
    w = v.clone()
    w[0, 2, 2, 0] = (w[0, 2, 2, 0] + 1) % 9
    assert not torch.allclose(p.encode_observation(v), p.encode_observation(w))
    assert torch.isfinite(p.encode_observation(torch.zeros_like(v))).all()
    with pytest.raises(ShapeMismatch):
        p.encode_observation(torch.zeros(1, 7, 7, 3, dtype=torch.long))


def test_aggregate_recurrent_reset():
    p = _policy("paper")
    h_o, h_s = torch.randn(1, 49, 16), torch.randn(1, 16)
    fresh, _ = p.aggregate(h_o, h_s, p.initial_state(1))
    _, carried = p.aggregate(torch.randn(1, 49, 16), torch.randn(1, 16), None)
    after_reset, _ = p.aggregate(h_o, h_s, p.initial_state(1))
    assert torch.equal(fresh, after_reset)
    stale, _ = p.aggregate(h_o, h_s, carried)
    assert not torch.allclose(fresh, stale)


def test_film_identity_conditioning():
    film = FiLM(5, 3)
    with torch.no_grad():
        film.film.weight.zero_()
        film.film.bias.copy_(torch.cat([torch.ones(5), torch.zeros(5)]))
    x = torch.randn(4, 5)
    assert torch.equal(film(x, torch.randn(4, 3)), x)
    cells = torch.randn(4, 49, 5)
    assert torch.equal(film(cells, torch.randn(4, 3)), cells)


def test_film_modulates_each_cell():
    film = FiLM(2, 1)
    with torch.no_grad():
        film.film.weight.zero_()
        film.film.bias.copy_(torch.tensor([2.0, 3.0, 0.5, -1.0]))
    x = torch.ones(1, 3, 2)
    assert torch.allclose(film(x, torch.zeros(1, 1)), torch.tensor([[2.5, 2.0]] * 3).unsqueeze(0))


def test_pointer_examples():
    nouns = DEFAULT_VOCAB.nouns
    ball, box = nouns.index("ball"), nouns.index("box")
    q = torch.ones(1, 1, dtype=torch.float64)
    k = torch.log(torch.tensor([[[0.5], [0.3], [0.2]]], dtype=torch.float64))
    slots = torch.tensor([[ball, box, ball]])
    pi = pointer_distribution(q, k, slots, torch.ones(1, 3, dtype=torch.bool), len(nouns))
    assert pi[0, ball].item() == pytest.approx(0.7)
    assert pi[0, box].item() == pytest.approx(0.3)
    assert pi[0].sum().item() == pytest.approx(1.0)
    assert (pi[0] > 0).sum() == 2
    single = pointer_distribution(q, k[:, :1], slots[:, :1], torch.ones(1, 1, dtype=torch.bool), len(nouns))
    assert single[0, ball].item() == pytest.approx(1.0)
    empty = pointer_distribution(q, k, slots, torch.zeros(1, 3, dtype=torch.bool), len(nouns))
    assert torch.allclose(empty, torch.full_like(empty, 1 / len(nouns)))


@pytest.mark.parametrize("variant", list(AgentVariant))
def test_distributions_normalize_and_pointer_support(profile, variant):
    p = _policy(profile, variant)
    notes = [V0, V1]
    out = p(make_batch([_view(s) for s in range(3)], [notes] * 3))
    for dist in (out.p_switch, out.p_phy, out.p_func, out.p_adj, out.p_noun):
        assert torch.allclose(dist.sum(-1), torch.ones(3, dtype=dist.dtype), atol=1e-6)
    if variant.uses_pointer:
        allowed_adj = {DEFAULT_VOCAB.adjectives.index(w) for w in ("mary's", "red")}
        allowed_noun = {DEFAULT_VOCAB.nouns.index(w) for w in ("toy", "ball")}
        assert set(torch.nonzero(out.p_adj[0]).flatten().tolist()) <= allowed_adj
        assert set(torch.nonzero(out.p_noun[0]).flatten().tolist()) <= allowed_noun
        gen = torch.Generator().manual_seed(0)
        for _ in range(50):
            a = sample_actions(out, variant, gen)
            assert set(a.adj.tolist()) <= allowed_adj and set(a.noun.tolist()) <= allowed_noun


def test_noquery_never_asks():
    p = _policy(variant=AgentVariant.NO_QUERY)
    out = p(make_batch([_view()] * 64, [[V0]] * 64))
    with torch.no_grad():
        out.p_switch[:] = torch.tensor([0.0, 1.0])  # even a policy that wants to ask
    gen = torch.Generator().manual_seed(0)
    for _ in range(20):
        assert (sample_actions(out, AgentVariant.NO_QUERY, gen).switch == 0).all()


def _point_mass(n, i):
    t = torch.zeros(1, n)
    t[0, i] = 1
    return t


def test_point_mass_query_and_factorization():
    out = PolicyOutput(_point_mass(2, 1), torch.full((1, 7), 1 / 7), _point_mass(2, 0),
                       _point_mass(22, 3), _point_mass(24, 5), torch.zeros(1))
    action, lp = act(out, AgentVariant.AFK)
    assert action == Query(DEFAULT_VOCAB.func_words[0], DEFAULT_VOCAB.adjectives[3], DEFAULT_VOCAB.nouns[5])
    assert lp == pytest.approx(0.0)

    gen = torch.Generator().manual_seed(1)
    probs = [torch.softmax(torch.randn(1, n, generator=gen), -1) for n in (2, 7, 2, 22, 24)]
    out = PolicyOutput(*probs, torch.zeros(1))
    ask = SampledActions(*(torch.tensor([i]) for i in (1, 0, 1, 4, 7)))
    expected = sum(torch.log(p[0, i]) for p, i in zip([probs[0], probs[2], probs[3], probs[4]], (1, 1, 4, 7)))
    assert log_prob(out, ask, AgentVariant.AFK).item() == pytest.approx(expected.item(), abs=1e-6)
    phys = SampledActions(*(torch.tensor([i]) for i in (0, 3, 1, 4, 7)))
    expected = torch.log(probs[0][0, 0]) + torch.log(probs[1][0, 3])
    assert log_prob(out, phys, AgentVariant.AFK).item() == pytest.approx(expected.item(), abs=1e-6)
    assert log_prob(out, phys, AgentVariant.NO_QUERY).item() == pytest.approx(torch.log(probs[1][0, 3]).item())


def test_policy_notes_per_variant():
    task_notes = [V0, V1]
    last = tokenize("the danger zone is yellow")
    assert policy_notes(AgentVariant.AFK, task_notes, V0, last) == task_notes
    assert policy_notes(AgentVariant.NO_QUERY, task_notes, V0, last) == [V0]
    assert policy_notes(AgentVariant.AFK_NO_NOTEBOOK, task_notes, V0, last) == [V0, last]
    assert policy_notes(AgentVariant.AFK_NO_NOTEBOOK, task_notes, V0, ()) == [V0]
    assert policy_notes(AgentVariant.QUERY_BASELINE, task_notes, V0, last) == [V0 + last]


def test_same_inputs_same_outputs(profile):
    p = _policy(profile)
    b = make_batch([_view()], [[V0, V1]])
    a, c = p(b), p(b)
    assert torch.equal(a.p_phy, c.p_phy) and torch.equal(a.value, c.value)


def test_checkpoint_round_trip(tmp_path, profile):
    p = _policy(profile, AgentVariant.AFK_NO_POINTER)
    path = tmp_path / "ck.pt"
    save_checkpoint(path, p, {"seed": 3})
    q, payload = load_checkpoint(path)
    assert payload["run_config"] == {"seed": 3}
    assert q.cfg == p.cfg
    b = make_batch([_view()], [[V0]])
    assert torch.equal(p(b).p_adj, q(b).p_adj)
    payload["format_version"] = 999
    torch.save(payload, path)
    with pytest.raises(VersionMismatch):
        load_checkpoint(path)
    with pytest.raises(MissingCheckpoint):
        load_checkpoint(tmp_path / "absent.pt")
