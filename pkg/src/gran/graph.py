"""Heterogeneous graph encoding of a masked n-ary fact, and padded batches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MASK_ID, PAD_ID, Fact, MaskedInstance, is_entity_position

NO_EDGE = 0
SUBJECT_RELATION = 1
OBJECT_RELATION = 2
RELATION_ATTRIBUTE = 3
ATTRIBUTE_VALUE = 4
NUM_EDGE_CODES = 5

ENTITY = "entity"
RELATION = "relation"


@dataclass(frozen=True)
class HeteroGraph:
    """Vertices in order ``[r, s, o, a1, v1, ...]`` with the masked one set to [MASK]."""

    vertices: tuple
    vertex_types: tuple
    edge_types: np.ndarray
    mask_position: int

    @property
    def k(self):
        return len(self.vertices)

    @property
    def m(self):
        return (self.k - 3) // 2


_TEMPLATES = {}


def edge_template(m):
    """Symmetric k x k edge-code matrix shared by every fact with ``m`` pairs."""
    tpl = _TEMPLATES.get(m)
    if tpl is None:
        k = 2 * m + 3
        tpl = np.zeros((k, k), dtype=np.int8)
        tpl[1, 0] = tpl[0, 1] = SUBJECT_RELATION
        tpl[2, 0] = tpl[0, 2] = OBJECT_RELATION
        for i in range(m):
            a, v = 3 + 2 * i, 4 + 2 * i
            tpl[0, a] = tpl[a, 0] = RELATION_ATTRIBUTE
            tpl[a, v] = tpl[v, a] = ATTRIBUTE_VALUE
        tpl.setflags(write=False)
        _TEMPLATES[m] = tpl
    return tpl


def vertex_types(m):
    return tuple(ENTITY if is_entity_position(p) else RELATION for p in range(2 * m + 3))


def build_graph(instance: MaskedInstance) -> HeteroGraph:
    m = instance.fact.m
    return HeteroGraph(
        vertices=instance.masked_vertices(MASK_ID),
        vertex_types=vertex_types(m),
        edge_types=edge_template(m),
        mask_position=instance.position,
    )


def edge_type(g: HeteroGraph, i, j):
    if not (0 <= i < g.k and 0 <= j < g.k):
        raise IndexError(f"vertex pair ({i}, {j}) outside graph of size {g.k}")
    return int(g.edge_types[i, j])


def graph_to_pattern(g: HeteroGraph) -> Fact:
    """Recover the (masked) fact from vertices and edges alone.

    Roles are read off the edge codes, not vertex positions: the relation is
    the vertex carrying both a subject and an object edge, aux pairs follow
    the relation-attribute and attribute-value edges in vertex order.
    """
    e = np.asarray(g.edge_types)
    rel = [i for i in range(g.k) if (e[i] == SUBJECT_RELATION).any() and (e[i] == OBJECT_RELATION).any()]
    if len(rel) != 1:
        raise ValueError("graph has no unique primary relation vertex")
    r = rel[0]
    (s,) = np.flatnonzero(e[r] == SUBJECT_RELATION)
    (o,) = np.flatnonzero(e[r] == OBJECT_RELATION)
    pairs = []
    for a in np.flatnonzero(e[r] == RELATION_ATTRIBUTE):
        (v,) = np.flatnonzero(e[a] == ATTRIBUTE_VALUE)
        pairs.append((g.vertices[a], g.vertices[v]))
    return Fact(g.vertices[s], g.vertices[r], g.vertices[o], tuple(pairs))


@dataclass
class GraphBatch:
    """Padded batch of instances.

    ``ids`` and ``pad`` are ``[B, K]``, ``edges`` is ``[B, K, K]``; padded
    vertices hold [PAD] and edge code 0. ``answers`` are class-local indices
    (entity index or relation index) and ``is_entity`` selects the class.
    """

    ids: np.ndarray
    edges: np.ndarray
    pad: np.ndarray
    mask_pos: np.ndarray
    is_entity: np.ndarray
    answers: np.ndarray
    arity: np.ndarray

    def __len__(self):
        return len(self.ids)


def collate(instances, vocab, pad_to=None):
    """Pad ``instances`` to a common vertex count and stack them."""
    n = len(instances)
    k_max = max(2 * inst.fact.m + 3 for inst in instances)
    if pad_to is not None:
        if pad_to < k_max:
            raise ValueError(f"pad_to={pad_to} smaller than the largest graph ({k_max})")
        k_max = pad_to
    ids = np.full((n, k_max), PAD_ID, dtype=np.int64)
    edges = np.zeros((n, k_max, k_max), dtype=np.int8)
    pad = np.ones((n, k_max), dtype=bool)
    mask_pos = np.empty(n, dtype=np.int64)
    is_entity = np.empty(n, dtype=bool)
    answers = np.empty(n, dtype=np.int64)
    arity = np.empty(n, dtype=np.int64)
    for b, inst in enumerate(instances):
        verts = inst.masked_vertices(MASK_ID)
        k = len(verts)
        ids[b, :k] = verts
        edges[b, :k, :k] = edge_template(inst.fact.m)
        pad[b, :k] = False
        mask_pos[b] = inst.position
        is_entity[b] = inst.is_entity
        offset = vocab.entity_offset if inst.is_entity else vocab.relation_offset
        answers[b] = inst.answer - offset
        arity[b] = inst.fact.arity
    return GraphBatch(ids, edges, pad, mask_pos, is_entity, answers, arity)
