"""GRAN: edge-biased fully-connected attention over the graph of a masked fact.

Parameter names (row-vector convention, ``y = x @ W``):

    embed.table              [V, d]   tied with the prediction head
    embed.ln.{gain,bias}     [d]
    pos.table                [max_vertices, d]   only with positional=True
    layer.<l>.attn.{Wq,Wk,Wv,Wo} [d, d], layer.<l>.attn.bo [d]
    layer.<l>.ln1.{gain,bias}, layer.<l>.ln2.{gain,bias}   [d]
    layer.<l>.ffn.W1 [d, f], ffn.b1 [f], ffn.W2 [f, d], ffn.b2 [d]
    edge_bias.K, edge_bias.V [4, d/H] (hete) or [1, d/H] (homo); absent for complete
    head.W1 [d, d], head.b1 [d], head.b2 [V]
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import checkpoint
from . import tensor as T
from .data import MASK_ID
from .errors import ConfigError, ContractError, InputError
from .graph import NUM_EDGE_CODES, GraphBatch, HeteroGraph
from .optim import ParamStore

VARIANTS = ("hete", "homo", "complete")
NEG_INF = -1e9


@dataclass(frozen=True)
class GranConfig:
    layers: int = 12
    heads: int = 4
    hidden: int = 256
    ffn_mult: int = 4
    dropout: float = 0.1
    variant: str = "hete"
    eps_entity: float = 0.0
    eps_relation: float = 0.0
    positional: bool = False
    max_vertices: int = 19
    init_std: float = 0.02
    ln_eps: float = 1e-6

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.layers < 0 or self.heads < 1 or self.hidden < 1 or self.ffn_mult < 1:
            raise ConfigError("layers/heads/hidden/ffn_mult must be positive")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden size {self.hidden} not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        for name in ("eps_entity", "eps_relation"):
            eps = getattr(self, name)
            if not 0.0 <= eps < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {eps}")

    @property
    def head_dim(self):
        return self.hidden // self.heads

    @property
    def ffn_size(self):
        return self.ffn_mult * self.hidden

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def init_params(config, num_relations, num_entities, rng, dtype=np.float32):
    """Normal(0, init_std) weights and embeddings, zero biases and edge biases."""
    d, f, dz = config.hidden, config.ffn_size, config.head_dim
    vocab_size = 2 + num_relations + num_entities
    store = ParamStore()

    def normal(*shape):
        return rng.normal(0.0, config.init_std, size=shape)

    store.add("embed.table", normal(vocab_size, d), dtype)
    store.add("embed.ln.gain", np.ones(d), dtype)
    store.add("embed.ln.bias", np.zeros(d), dtype)
    if config.positional:
        store.add("pos.table", normal(config.max_vertices, d), dtype)
    for layer in range(config.layers):
        p = f"layer.{layer}."
        for w in ("Wq", "Wk", "Wv", "Wo"):
            store.add(p + "attn." + w, normal(d, d), dtype)
        store.add(p + "attn.bo", np.zeros(d), dtype)
        store.add(p + "ln1.gain", np.ones(d), dtype)
        store.add(p + "ln1.bias", np.zeros(d), dtype)
        store.add(p + "ffn.W1", normal(d, f), dtype)
        store.add(p + "ffn.b1", np.zeros(f), dtype)
        store.add(p + "ffn.W2", normal(f, d), dtype)
        store.add(p + "ffn.b2", np.zeros(d), dtype)
        store.add(p + "ln2.gain", np.ones(d), dtype)
        store.add(p + "ln2.bias", np.zeros(d), dtype)
    n_pairs = {"hete": 4, "homo": 1, "complete": 0}[config.variant]
    if n_pairs:
        store.add("edge_bias.K", np.zeros((n_pairs, dz)), dtype)
        store.add("edge_bias.V", np.zeros((n_pairs, dz)), dtype)
    store.add("head.W1", normal(d, d), dtype)
    store.add("head.b1", np.zeros(d), dtype)
    store.add("head.b2", np.zeros(vocab_size), dtype)
    return store


# ---------------------------------------------------------------------------
# edge biases

_BIAS_ROWS = {"hete": np.array([0, 1, 2, 3, 4]), "homo": np.array([0, 1, 1, 1, 1])}


def bias_tables(params, config):
    """Per-code ``(K, V)`` bias tables of shape ``[5, d/H]``; row 0 is zero.

    Returns ``(None, None)`` for the complete variant.
    """
    if config.variant == "complete":
        return None, None
    rows = _BIAS_ROWS[config.variant]
    out = []
    for kind in ("K", "V"):
        table = params[f"edge_bias.{kind}"]
        zero = np.zeros((1, config.head_dim), dtype=table.dtype)
        out.append(T.take(T.concat([zero, table], axis=0), rows))
    return tuple(out)


def resolve_bias(variant, code, params, config):
    """The ``(e^K, e^V)`` vectors assigned to edge ``code`` under ``variant``."""
    if code not in range(NUM_EDGE_CODES):
        raise ValueError(f"unknown edge code {code}")
    if variant != config.variant:
        config = GranConfig(**{**config.to_dict(), "variant": variant})
    zero = np.zeros(config.head_dim, dtype=params.dtype)
    if variant == "complete" or code == 0:
        return zero, zero.copy()
    row = code - 1 if variant == "hete" else 0
    return params["edge_bias.K"].data[row].copy(), params["edge_bias.V"].data[row].copy()


# ---------------------------------------------------------------------------
# layers


def _one_hot_edges(edges, dtype):
    return np.eye(NUM_EDGE_CODES, dtype=dtype)[edges]


def edge_biased_attention(X, edge_types, params, config, layer, head, key_mask=None):
    """Single-head edge-biased attention output ``[..., k, d/H]``.

    Reference path for one head; :func:`gran_layer` computes all heads at once.
    """
    X = T.as_tensor(X)
    dz = config.head_dim
    cols = slice(head * dz, (head + 1) * dz)
    p = f"layer.{layer}.attn."
    q = X @ params[p + "Wq"][:, cols]
    k = X @ params[p + "Wk"][:, cols]
    v = X @ params[p + "Wv"][:, cols]
    onehot = _one_hot_edges(np.asarray(edge_types), X.dtype)
    bias_k, bias_v = bias_tables(params, config)
    lead = "nopqrs"[: X.ndim - 2]
    scores = q @ k.swapaxes(-1, -2)
    if bias_k is not None:
        # q_i . e_ij  ==  (q @ E^T)[i, code(i, j)]
        scores = scores + T.einsum(f"{lead}ic,{lead}ijc->{lead}ij", q @ bias_k.T, onehot)
    scores = scores * (1.0 / math.sqrt(dz))
    if key_mask is not None:
        scores = scores + np.where(key_mask, NEG_INF, 0.0).astype(X.dtype)[..., None, :]
    attn = T.softmax(scores, axis=-1)
    z = attn @ v
    if bias_v is not None:
        z = z + T.einsum(f"{lead}ij,{lead}ijc->{lead}ic", attn, onehot) @ bias_v
    return z


def gran_layer(X, onehot, key_bias, params, config, layer, bias_k, bias_v, training=False, rng=None):
    """One graph attention layer on ``X`` of shape ``[B, K, d]``.

    ``onehot`` is the ``[B, K, K, 5]`` edge-code indicator and ``key_bias`` the
    additive ``[B, 1, 1, K]`` padding mask.
    """
    B, K, d = X.shape
    H, dz = config.heads, config.head_dim
    rate = config.dropout
    p = f"layer.{layer}."

    def split_heads(t):
        return t.reshape(B, K, H, dz).transpose(0, 2, 1, 3)

    q = split_heads(X @ params[p + "attn.Wq"])
    k = split_heads(X @ params[p + "attn.Wk"])
    v = split_heads(X @ params[p + "attn.Wv"])
    scores = q @ k.swapaxes(-1, -2)
    if bias_k is not None:
        scores = scores + T.einsum("bhic,bijc->bhij", q @ bias_k.T, onehot)
    scores = scores * (1.0 / math.sqrt(dz)) + key_bias
    attn = T.dropout(T.softmax(scores, axis=-1), rate, training, rng)
    z = attn @ v
    if bias_v is not None:
        z = z + T.einsum("bhij,bijc->bhic", attn, onehot) @ bias_v
    z = z.transpose(0, 2, 1, 3).reshape(B, K, d)
    out = z @ params[p + "attn.Wo"] + params[p + "attn.bo"]
    X = T.layer_norm(
        X + T.dropout(out, rate, training, rng), params[p + "ln1.gain"], params[p + "ln1.bias"], config.ln_eps
    )
    hidden = T.gelu(X @ params[p + "ffn.W1"] + params[p + "ffn.b1"])
    ffn = hidden @ params[p + "ffn.W2"] + params[p + "ffn.b2"]
    return T.layer_norm(
        X + T.dropout(ffn, rate, training, rng), params[p + "ln2.gain"], params[p + "ln2.bias"], config.ln_eps
    )


def encode(batch: GraphBatch, params, config, training=False, rng=None):
    """Vertex states ``[B, K, d]`` after embedding and all layers."""
    dtype = params.dtype
    B, K = batch.ids.shape
    X = T.take(params["embed.table"], batch.ids)
    if config.positional:
        if K > config.max_vertices:
            raise ContractError(f"{K} vertices exceed max_vertices={config.max_vertices}")
        X = X + params["pos.table"][:K]
    X = T.layer_norm(X, params["embed.ln.gain"], params["embed.ln.bias"], config.ln_eps)
    X = T.dropout(X, config.dropout, training, rng)
    onehot = _one_hot_edges(batch.edges, dtype)
    key_bias = np.where(batch.pad, NEG_INF, 0.0).astype(dtype)[:, None, None, :]
    bias_k, bias_v = bias_tables(params, config)
    for layer in range(config.layers):
        X = gran_layer(X, onehot, key_bias, params, config, layer, bias_k, bias_v, training, rng)
    return X


def mask_hidden(batch, params, config, training=False, rng=None):
    """``W1 h + b1`` at each instance's [MASK] vertex, shape ``[B, d]``."""
    ids = batch.ids[np.arange(len(batch)), batch.mask_pos]
    if (ids != MASK_ID).any() or ((batch.ids == MASK_ID).sum(axis=1) != 1).any():
        raise ContractError("every graph must carry exactly one [MASK] vertex")
    X = encode(batch, params, config, training, rng)
    h = X[np.arange(len(batch)), batch.mask_pos]
    return h @ params["head.W1"] + params["head.b1"]


def class_rows(vocab_sizes, entity):
    """Row slice of the unified vocabulary for one candidate class."""
    num_relations, num_entities = vocab_sizes
    if entity:
        return slice(2 + num_relations, 2 + num_relations + num_entities)
    return slice(2, 2 + num_relations)


def class_logits(h1, params, vocab_sizes, entity):
    """Logits over entities or relations via the tied embedding rows."""
    rows = class_rows(vocab_sizes, entity)
    return h1 @ params["embed.table"][rows].T + params["head.b2"][rows]


def vocab_sizes_of(params, num_relations):
    return num_relations, params["embed.table"].shape[0] - 2 - num_relations


def forward(graph: HeteroGraph, params, config, num_relations, training=False, rng=None):
    """Logits of one graph over its candidate class (entities or relations)."""
    if sum(v == MASK_ID for v in graph.vertices) != 1:
        raise ContractError("graph must contain exactly one [MASK] vertex")
    k = graph.k
    batch = GraphBatch(
        ids=np.asarray(graph.vertices, dtype=np.int64)[None],
        edges=np.asarray(graph.edge_types)[None],
        pad=np.zeros((1, k), dtype=bool),
        mask_pos=np.array([graph.mask_position]),
        is_entity=np.array([graph.vertex_types[graph.mask_position] == "entity"]),
        answers=np.zeros(1, dtype=np.int64),
        arity=np.array([(k - 3) // 2 + 2]),
    )
    h1 = mask_hidden(batch, params, config, training, rng)
    sizes = vocab_sizes_of(params, num_relations)
    return class_logits(h1, params, sizes, bool(batch.is_entity[0]))[0]


# ---------------------------------------------------------------------------
# loss


def smoothed_labels(answers, num_classes, eps):
    """Rows with ``1 - eps`` on the answer and ``eps / (C - 1)`` elsewhere."""
    if not 0.0 <= eps < 1.0:
        raise ConfigError(f"label smoothing rate must lie in [0, 1), got {eps}")
    answers = np.atleast_1d(np.asarray(answers))
    if (answers < 0).any() or (answers >= num_classes).any():
        raise ContractError(f"answer outside candidate range [0, {num_classes})")
    if num_classes == 1:
        return np.ones((len(answers), 1))
    y = np.full((len(answers), num_classes), eps / (num_classes - 1))
    y[np.arange(len(answers)), answers] = 1.0 - eps
    return y


def loss(logits, answer, eps):
    """Smoothed cross-entropy of one logit vector against class-local ``answer``."""
    logits = T.as_tensor(logits)
    y = smoothed_labels([answer], logits.shape[-1], eps)[0]
    return T.soft_cross_entropy(logits, y, reduction="sum")


def batch_loss(batch, params, config, num_relations, training=False, rng=None, normalizer=None):
    """Sum of per-instance smoothed losses divided by ``normalizer`` (default B).

    Entity- and relation-masked rows are scored against their own class.
    """
    h1 = mask_hidden(batch, params, config, training, rng)
    sizes = vocab_sizes_of(params, num_relations)
    total = None
    for entity, eps in ((True, config.eps_entity), (False, config.eps_relation)):
        rows = np.flatnonzero(batch.is_entity == entity)
        if rows.size == 0:
            continue
        logits = class_logits(h1[rows], params, sizes, entity)
        y = smoothed_labels(batch.answers[rows], logits.shape[-1], eps)
        part = T.soft_cross_entropy(logits, y, reduction="sum")
        total = part if total is None else total + part
    return total * (1.0 / (normalizer or len(batch)))


# ---------------------------------------------------------------------------
# checkpoints


def config_hash(config):
    blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, params, config, vocab, extra=None, with_optimizer=False):
    header = {
        "config": config.to_dict(),
        "config_hash": config_hash(config),
        "num_relations": vocab.num_relations,
        "num_entities": vocab.num_entities,
        "vocab_fingerprint": vocab.fingerprint(),
        "adam_step": params.step,
    }
    if extra:
        header.update(extra)
    tensors = {name: t.data for name, t in params.items()}
    if with_optimizer and params.optimizer_initialized:
        for name in params:
            tensors[f"adam.m/{name}"] = params.m[name]
            tensors[f"adam.v/{name}"] = params.v[name]
    checkpoint.save(path, tensors, header)


def load_checkpoint(path, expected_config=None, vocab=None):
    """Return ``(params, config, header)``; refuse mismatching config or vocabulary."""
    header, tensors = checkpoint.load(path)
    config = GranConfig.from_dict(header["config"])
    if expected_config is not None and expected_config != config:
        raise ContractError(f"{path}: checkpoint config does not match the requested config")
    if vocab is not None and header.get("vocab_fingerprint") != vocab.fingerprint():
        raise ContractError(f"{path}: checkpoint vocabulary does not match the dataset")
    params = ParamStore()
    for name, arr in tensors.items():
        if not name.startswith("adam."):
            params.add(name, arr, np.float32)
    if any(n.startswith("adam.") for n in tensors):
        for name in params:
            params.m[name] = tensors[f"adam.m/{name}"].copy()
            params.v[name] = tensors[f"adam.v/{name}"].copy()
    params.step = int(header.get("adam_step", 0))
    expected = init_params(config, header["num_relations"], header["num_entities"], _ShapeOnlyRng())
    for name, t in expected.items():
        if name not in params or params[name].shape != t.shape:
            raise InputError(f"{path}: parameter {name!r} missing or misshapen")
    return params, config, header


class _ShapeOnlyRng:
    """Stand-in rng for shape validation without drawing random numbers."""

    def normal(self, loc, scale, size):
        return np.zeros(size)
