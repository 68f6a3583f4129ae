"""Actor-critic network with pointer-restricted query heads.

Two profiles share every contract:

* ``paper``: GRU note encoder, three-layer convolutional view encoder, two
  FiLM layers applied to every cell, and an LSTM cell; hidden size 128.
* ``lite``: bag-of-embeddings notes, a per-cell linear view encoder, one
  per-cell FiLM layer, and a gated concatenation without recurrence; hidden
  size 64.

In both profiles the view stays a 7x7 grid of cell features until the note
summary has modulated each cell, so the policy can match words in a reply
(a color, say) against the cells showing it.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .env import VIEW, Action, PhysicalAction
from .query_lang import DEFAULT_VOCAB, Query, Utterance, Vocabulary

N_OBJECTS, N_COLORS, N_STATES, N_DIRS = 9, 7, 4, 4
N_PHYSICAL = len(PhysicalAction)
FORMAT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


class AgentVariant(str, Enum):
    AFK = "afk"
    NO_QUERY = "noquery"
    QUERY_BASELINE = "query_baseline"
    AFK_NO_NOTEBOOK = "afk_no_notebook"
    AFK_NO_POINTER = "afk_no_pointer"
    AFK_NO_BONUS = "afk_no_bonus"

    @property
    def can_query(self) -> bool:
        return self is not AgentVariant.NO_QUERY

    @property
    def uses_pointer(self) -> bool:
        return self in (AgentVariant.AFK, AgentVariant.AFK_NO_NOTEBOOK, AgentVariant.AFK_NO_BONUS)

    @property
    def uses_bonus(self) -> bool:
        return self in (AgentVariant.AFK, AgentVariant.AFK_NO_NOTEBOOK, AgentVariant.AFK_NO_POINTER)


def policy_notes(variant: AgentVariant, task_notes: Sequence[Utterance], instruction: Utterance,
                 last_response: Utterance) -> list[Utterance]:
    """The note list a variant encodes at one step.

    ``task_notes`` is the notebook's instruction set (instruction first);
    ``last_response`` the most recent non-empty oracle reply.
    """
    if variant is AgentVariant.NO_QUERY:
        return [instruction]
    if variant is AgentVariant.QUERY_BASELINE:
        return [tuple(instruction) + tuple(last_response)]
    if variant is AgentVariant.AFK_NO_NOTEBOOK:
        return [instruction, last_response] if last_response else [instruction]
    return list(task_notes)


@dataclass(frozen=True)
class PolicyConfig:
    profile: str = "lite"
    hidden: Optional[int] = None
    variant: AgentVariant = AgentVariant.AFK
    head_hidden: int = 64

    def __post_init__(self):
        if self.profile not in ("lite", "paper"):
            raise ValueError(f"unknown profile {self.profile!r}")
        object.__setattr__(self, "variant", AgentVariant(self.variant))
        if self.hidden is None:
            object.__setattr__(self, "hidden", 64 if self.profile == "lite" else 128)
        if self.hidden < 1:
            raise ValueError("hidden size must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


@dataclass
class PolicyBatch:
    """Padded tensors for a batch of agent inputs."""
    views: torch.Tensor       # (B, 7, 7, 4) long
    notes: torch.Tensor       # (B, N, T) long token ids, 0 = pad
    note_mask: torch.Tensor   # (B, N) bool

    def __len__(self) -> int:
        return self.views.shape[0]

    def index(self, idx) -> "PolicyBatch":
        return PolicyBatch(self.views[idx], self.notes[idx], self.note_mask[idx])


@lru_cache(maxsize=4096)
def _encode_cached(vocab: Vocabulary, u: Utterance) -> tuple[int, ...]:
    return tuple(vocab.encode(u))


def make_batch(views: Sequence[np.ndarray], notes: Sequence[Sequence[Utterance]],
               vocab: Vocabulary = DEFAULT_VOCAB, pad_to: Optional[tuple[int, int]] = None) -> PolicyBatch:
    B = len(views)
    encoded = [[_encode_cached(vocab, tuple(u)) for u in ns] for ns in notes]
    n_max = max(len(ns) for ns in encoded)
    t_max = max((len(u) for ns in encoded for u in ns), default=1)
    if pad_to is not None:
        n_max, t_max = max(n_max, pad_to[0]), max(t_max, pad_to[1])
    ids = np.zeros((B, n_max, t_max), dtype=np.int64)
    mask = np.zeros((B, n_max), dtype=bool)
    for b, ns in enumerate(encoded):
        for i, u in enumerate(ns):
            ids[b, i, : len(u)] = u
            mask[b, i] = True
    v = torch.from_numpy(np.asarray(views, dtype=np.int64).reshape(B, VIEW, VIEW, 4))
    return PolicyBatch(v, torch.from_numpy(ids), torch.from_numpy(mask))


def pad_batches(batches: Sequence[PolicyBatch]) -> PolicyBatch:
    n = max(b.notes.shape[1] for b in batches)
    t = max(b.notes.shape[2] for b in batches)
    notes, masks = [], []
    for b in batches:
        dn, dt = n - b.notes.shape[1], t - b.notes.shape[2]
        notes.append(F.pad(b.notes, (0, dt, 0, dn)))
        masks.append(F.pad(b.note_mask, (0, dn)))
    return PolicyBatch(torch.cat([b.views for b in batches]), torch.cat(notes), torch.cat(masks))


@dataclass
class PolicyOutput:
    p_switch: torch.Tensor  # (B, 2)
    p_phy: torch.Tensor     # (B, 7)
    p_func: torch.Tensor    # (B, |V_func|)
    p_adj: torch.Tensor     # (B, |V_adj|)
    p_noun: torch.Tensor    # (B, |V_noun|)
    value: torch.Tensor     # (B,)
    state: Optional[tuple] = None


def _mlp(inp: int, hidden: int, out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(inp, hidden), nn.Tanh(), nn.Linear(hidden, hidden), nn.Tanh(),
                         nn.Linear(hidden, out))


def one_hot_view(views: torch.Tensor, dtype=torch.float32) -> torch.Tensor:
    """(B, 7, 7, 4) ids -> (B, 24, 7, 7) one-hot channels."""
    parts = [
        F.one_hot(views[..., 0].clamp(0, N_OBJECTS - 1), N_OBJECTS),
        F.one_hot(views[..., 1].clamp(0, N_COLORS - 1), N_COLORS),
        F.one_hot(views[..., 2].clamp(0, N_STATES - 1), N_STATES),
        F.one_hot(views[..., 3].clamp(0, N_DIRS - 1), N_DIRS),
    ]
    return torch.cat(parts, dim=-1).to(dtype).permute(0, 3, 1, 2)


class DeepSet(nn.Module):
    """Sum-pooled set encoder: rho(sum_i phi(x_i))."""

    def __init__(self, dim: int):
        super().__init__()
        self.phi = nn.Sequential(nn.Linear(dim, dim), nn.Tanh())
        self.rho = nn.Sequential(nn.Linear(dim, dim), nn.Tanh())

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        feats = self.phi(x) * mask.unsqueeze(-1).to(x.dtype)
        return self.rho(feats.sum(dim=1))


class FiLM(nn.Module):
    """out = gamma(cond) * x + beta(cond)."""

    def __init__(self, dim: int, cond_dim: int):
        super().__init__()
        self.film = nn.Linear(cond_dim, 2 * dim)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        gamma, beta = self.film(cond).chunk(2, dim=-1)
        # broadcast over any spatial axes between batch and channels
        shape = (cond.shape[0],) + (1,) * (x.dim() - 2) + (gamma.shape[-1],)
        return gamma.reshape(shape) * x + beta.reshape(shape)


class PointerHead(nn.Module):
    """Attention over slot words present in the notes, summed per word."""

    def __init__(self, dim: int, slot_ids: torch.Tensor, slot_size: int):
        super().__init__()
        self.w_q = nn.Linear(dim, dim, bias=False)
        self.w_k = nn.Linear(dim, dim, bias=False)
        self.slot_size = slot_size
        # token id -> slot index, -1 for tokens outside the slot
        self.register_buffer("slot_of_token", slot_ids, persistent=False)

    def forward(self, h_x: torch.Tensor, h_tokens: torch.Tensor, tokens: torch.Tensor,
                token_mask: torch.Tensor) -> torch.Tensor:
        B = h_x.shape[0]
        flat_h = h_tokens.reshape(B, -1, h_tokens.shape[-1])
        slots = self.slot_of_token[tokens.reshape(B, -1)]
        valid = (slots >= 0) & token_mask.reshape(B, -1)
        return pointer_distribution(self.w_q(h_x), self.w_k(flat_h), slots, valid, self.slot_size)


def pointer_distribution(q: torch.Tensor, k: torch.Tensor, slots: torch.Tensor, valid: torch.Tensor,
                         slot_size: int) -> torch.Tensor:
    """pi(w) = sum_i softmax(q . k_i)[i] * [word_i == w]; uniform when no candidate."""
    logits = torch.einsum("bd,bmd->bm", q, k)
    logits = logits.masked_fill(~valid, float("-inf"))
    any_valid = valid.any(dim=1, keepdim=True)
    safe = torch.where(any_valid, logits, torch.zeros_like(logits))
    attn = torch.softmax(safe, dim=1) * valid.to(q.dtype)
    idx = slots.clamp(min=0)
    probs = torch.zeros(q.shape[0], slot_size, dtype=q.dtype, device=q.device)
    probs = probs.scatter_add(1, idx, attn)
    uniform = torch.full_like(probs, 1.0 / slot_size)
    return torch.where(any_valid, probs, uniform)


class Policy(nn.Module):
    def __init__(self, cfg: PolicyConfig = PolicyConfig(), vocab: Vocabulary = DEFAULT_VOCAB):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        l = cfg.hidden
        n_tokens = len(vocab.words) + 1
        self.embed = nn.Embedding(n_tokens, l, padding_idx=0)
        cells = VIEW * VIEW
        if cfg.profile == "paper":
            self.note_rnn = nn.GRU(l, l, batch_first=True)
            self.obs_conv = nn.Sequential(
                nn.Conv2d(24, l, 3, padding=1), nn.ReLU(),
                nn.Conv2d(l, l, 3, padding=1), nn.ReLU(),
                nn.Conv2d(l, l, 3, padding=1), nn.ReLU(),
            )
            self.film_in = nn.ModuleList([nn.Linear(l, l), nn.Linear(l, l)])
            self.films = nn.ModuleList([FiLM(l, l), FiLM(l, l)])
            self.cell_pool = nn.Linear(cells * l, l)
            self.memory = nn.LSTMCell(l, l)
        else:
            self.note_proj = nn.Linear(l, l)
            self.obs_cell = nn.Linear(24, l)
            self.film = FiLM(l, l)
            self.cell_pool = nn.Linear(cells * l, l)
            self.gate = nn.Linear(2 * l, l)
            self.mix = nn.Linear(2 * l, l)
        self.set_pool = DeepSet(l)

        h = cfg.head_hidden
        self.switch_head = _mlp(l, h, 2)
        self.phy_head = _mlp(l, h, N_PHYSICAL)
        self.func_head = _mlp(l, h, len(vocab.func_words))
        self.value_head = _mlp(l, h, 1)
        if cfg.variant.uses_pointer:
            self.adj_head = PointerHead(l, self._slot_lookup(vocab.adjectives), len(vocab.adjectives))
            self.noun_head = PointerHead(l, self._slot_lookup(vocab.nouns), len(vocab.nouns))
        else:
            self.adj_head = _mlp(l, h, len(vocab.adjectives))
            self.noun_head = _mlp(l, h, len(vocab.nouns))

    def _slot_lookup(self, slot_words) -> torch.Tensor:
        table = torch.full((len(self.vocab.words) + 1,), -1, dtype=torch.long)
        for i, w in enumerate(slot_words):
            table[self.vocab.index(w)] = i
        return table

    @property
    def recurrent(self) -> bool:
        return self.cfg.profile == "paper"

    def initial_state(self, batch_size: int):
        if not self.recurrent:
            return None
        z = torch.zeros(batch_size, self.cfg.hidden, dtype=self.embed.weight.dtype)
        return (z, z.clone())

    # --- encoders ---------------------------------------------------------

    def encode_notes(self, notes: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-token encodings (B, N, T, l) and per-note summaries (B, N, l)."""
        B, N, T = notes.shape
        tok_mask = notes > 0
        emb = self.embed(notes)
        if self.cfg.profile == "paper":
            flat = emb.reshape(B * N, T, -1)
            lengths = tok_mask.reshape(B * N, T).sum(1).clamp(min=1)
            packed = nn.utils.rnn.pack_padded_sequence(flat, lengths.cpu(), batch_first=True,
                                                       enforce_sorted=False)
            out, last = self.note_rnn(packed)
            out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True, total_length=T)
            h_tok = out.reshape(B, N, T, -1)
            summary = last[0].reshape(B, N, -1)
        else:
            h_tok = torch.tanh(self.note_proj(emb))
            m = tok_mask.unsqueeze(-1).to(h_tok.dtype)
            summary = (h_tok * m).sum(2) / m.sum(2).clamp(min=1.0)
        h_tok = h_tok * tok_mask.unsqueeze(-1).to(h_tok.dtype)
        return h_tok, summary

    def note_encodings(self, notes: Sequence[Utterance]) -> list[torch.Tensor]:
        """Per-token encodings of each note, one ``len(note) x l`` tensor per note."""
        if not notes:
            raise ValueError("need at least one note")
        batch = make_batch([np.zeros((VIEW, VIEW, 4), dtype=np.int64)], [list(notes)], self.vocab)
        h_tok, _ = self.encode_notes(batch.notes)
        return [h_tok[0, i, : len(u)] for i, u in enumerate(notes)]

    def pool_notes(self, summaries: torch.Tensor, note_mask: torch.Tensor) -> torch.Tensor:
        return self.set_pool(summaries, note_mask)

    def encode_observation(self, views: torch.Tensor) -> torch.Tensor:
        """Per-cell features (B, 49, l); kept spatial so notes can condition each cell."""
        if views.shape[-3:] != (VIEW, VIEW, 4):
            raise ShapeMismatch(f"view shape {tuple(views.shape)} is not (..., 7, 7, 4)")
        x = one_hot_view(views, self.embed.weight.dtype)
        if self.cfg.profile == "paper":
            return self.obs_conv(x).flatten(2).transpose(1, 2)
        return self.obs_cell(x.flatten(2).transpose(1, 2))

    def aggregate(self, h_o: torch.Tensor, h_s: torch.Tensor, state=None):
        """FiLM every cell on the note summary, pool cells, then mix with memory."""
        if self.cfg.profile == "paper":
            x = h_o
            for lin, film in zip(self.film_in, self.films):
                x = torch.relu(film(lin(x), h_s))
            x = torch.relu(self.cell_pool(x.flatten(1)))
            if state is None:
                state = self.initial_state(h_o.shape[0])
            h, c = self.memory(x, state)
            return h, (h, c)
        x = torch.relu(self.film(h_o, h_s))
        x = torch.tanh(self.cell_pool(x.flatten(1)))
        z = torch.cat([x, h_s], dim=-1)
        return torch.tanh(self.mix(z)) * torch.sigmoid(self.gate(z)), None

    # --- forward ----------------------------------------------------------

    def forward(self, batch: PolicyBatch, state=None) -> PolicyOutput:
        h_tok, summary = self.encode_notes(batch.notes)
        h_s = self.pool_notes(summary, batch.note_mask)
        h_o = self.encode_observation(batch.views)
        h_x, new_state = self.aggregate(h_o, h_s, state)

        p_switch = torch.softmax(self.switch_head(h_x), -1)
        p_phy = torch.softmax(self.phy_head(h_x), -1)
        p_func = torch.softmax(self.func_head(h_x), -1)
        if isinstance(self.adj_head, PointerHead):
            tok_mask = (batch.notes > 0) & batch.note_mask.unsqueeze(-1)
            p_adj = self.adj_head(h_x, h_tok, batch.notes, tok_mask)
            p_noun = self.noun_head(h_x, h_tok, batch.notes, tok_mask)
        else:
            p_adj = torch.softmax(self.adj_head(h_x), -1)
            p_noun = torch.softmax(self.noun_head(h_x), -1)
        value = self.value_head(h_x).squeeze(-1)
        return PolicyOutput(p_switch, p_phy, p_func, p_adj, p_noun, value, new_state)


# --- action sampling and likelihood -----------------------------------------

@dataclass
class SampledActions:
    switch: torch.Tensor  # (B,) 0 physical, 1 query
    phy: torch.Tensor
    func: torch.Tensor
    adj: torch.Tensor
    noun: torch.Tensor

    def stack(self) -> torch.Tensor:
        return torch.stack([self.switch, self.phy, self.func, self.adj, self.noun], dim=1)

    @classmethod
    def unstack(cls, t: torch.Tensor) -> "SampledActions":
        return cls(*t.unbind(1))


def _draw(p: torch.Tensor, generator: Optional[torch.Generator]) -> torch.Tensor:
    return torch.multinomial(p, 1, generator=generator).squeeze(1)


def sample_actions(out: PolicyOutput, variant: AgentVariant,
                   generator: Optional[torch.Generator] = None, greedy: bool = False) -> SampledActions:
    with torch.no_grad():
        pick = (lambda p: p.argmax(-1)) if greedy else (lambda p: _draw(p, generator))
        switch = pick(out.p_switch)
        if not variant.can_query:
            switch = torch.zeros_like(switch)
        return SampledActions(switch, pick(out.p_phy), pick(out.p_func), pick(out.p_adj), pick(out.p_noun))


def _safe_log(p: torch.Tensor) -> torch.Tensor:
    # pointer heads hold exact zeros; clamping keeps gradients finite
    return torch.log(p.clamp_min(torch.finfo(p.dtype).tiny))


def _log_at(p: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    return _safe_log(p.gather(1, idx.unsqueeze(1)).squeeze(1))


def log_prob(out: PolicyOutput, actions: SampledActions, variant: AgentVariant) -> torch.Tensor:
    """Composite log-probability; only the heads the action exercised contribute."""
    lp_phy = _log_at(out.p_phy, actions.phy)
    lp_query = _log_at(out.p_func, actions.func) + _log_at(out.p_adj, actions.adj) + _log_at(out.p_noun, actions.noun)
    is_query = actions.switch == 1
    if not variant.can_query:
        return lp_phy
    lp = _log_at(out.p_switch, actions.switch)
    return lp + torch.where(is_query, lp_query, lp_phy)


def _entropy(p: torch.Tensor) -> torch.Tensor:
    return -(p * _safe_log(p)).sum(-1)


def entropy(out: PolicyOutput, variant: AgentVariant) -> torch.Tensor:
    h_phy = _entropy(out.p_phy)
    if not variant.can_query:
        return h_phy
    h_query = _entropy(out.p_func) + _entropy(out.p_adj) + _entropy(out.p_noun)
    p0, p1 = out.p_switch[:, 0], out.p_switch[:, 1]
    return _entropy(out.p_switch) + p0 * h_phy + p1 * h_query


def to_action(actions: SampledActions, i: int, vocab: Vocabulary = DEFAULT_VOCAB) -> Action:
    if int(actions.switch[i]) == 0:
        return PhysicalAction(int(actions.phy[i]))
    return Query(vocab.func_words[int(actions.func[i])], vocab.adjectives[int(actions.adj[i])],
                 vocab.nouns[int(actions.noun[i])])


def act(out: PolicyOutput, variant: AgentVariant, generator: Optional[torch.Generator] = None,
        vocab: Vocabulary = DEFAULT_VOCAB) -> tuple[Action, float]:
    """Sample one action from a single-row output; returns it with its log-probability."""
    acts = sample_actions(out, variant, generator)
    with torch.no_grad():
        lp = log_prob(out, acts, variant)
    return to_action(acts, 0, vocab), float(lp[0])


# --- checkpoints -------------------------------------------------------------

class VersionMismatch(RuntimeError):
    pass


class MissingCheckpoint(FileNotFoundError):
    pass


def save_checkpoint(path: str | Path, policy: Policy, run_config: Optional[dict] = None, **extra):
    payload = {
        "format_version": FORMAT_VERSION,
        "policy_config": policy.cfg.to_dict(),
        "vocabulary": policy.vocab.to_text(),
        "run_config": run_config or {},
        "state_dict": policy.state_dict(),
        **extra,
    }
    tmp = Path(str(path) + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[Policy, dict]:
    path = Path(path)
    if not path.exists():
        raise MissingCheckpoint(f"no checkpoint at {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format {version}, expected {FORMAT_VERSION}")
    cfg = PolicyConfig(**payload["policy_config"])
    vocab = Vocabulary.from_text(payload["vocabulary"])
    policy = Policy(cfg, vocab)
    policy.load_state_dict(payload["state_dict"])
    return policy, payload
