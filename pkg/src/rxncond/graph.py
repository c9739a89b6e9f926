"""Relational graph convolution over molecules and reactions.

Each layer computes, for every node ``i``::

    h_i' = ReLU( sum_r sum_{j in N_i^r} W_r h_j / c_{i,r}  +  W_0 h_i )

with ``c_{i,r} = |N_i^r|``.  Chemical bonds become two directed edges whose
relation encodes bond order and direction, giving 8 relation types.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .autograd import nn
from .autograd import tensor as T
from .autograd.tensor import Tensor
from .smiles import Atom, Molecule, ReactionRecord

ELEMENTS = ("C", "N", "O", "S", "F", "Cl", "Br", "I", "P", "B", "Si", "Se", "Na", "K", "Li", "*")
BOND_ORDERS = ("single", "double", "triple", "aromatic")
NUM_RELATIONS = 2 * len(BOND_ORDERS)
NODE_FEATURES = len(ELEMENTS) + 1 + 3  # elements, other, aromatic, charge>0, charge<0


class GraphError(ValueError):
    pass


@dataclass
class RelGraph:
    node_features: np.ndarray
    edges: list[tuple[int, int, int]]  # (receiver i, sender j, relation r)
    relation_count: int = NUM_RELATIONS

    def __post_init__(self):
        n = len(self.node_features)
        for i, j, r in self.edges:
            if not 0 <= r < self.relation_count:
                raise GraphError(f"relation index {r} out of range [0, {self.relation_count})")
            if not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"edge ({i}, {j}) references a missing node")

    @property
    def num_nodes(self) -> int:
        return len(self.node_features)

    def adjacency(self) -> list[sp.csr_matrix]:
        """Per-relation receiver-by-sender matrices with 1/c_{i,r} entries."""
        n = self.num_nodes
        mats = []
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 3)
        for r in range(self.relation_count):
            sel = edges[edges[:, 2] == r]
            a = sp.coo_matrix((np.ones(len(sel)), (sel[:, 0], sel[:, 1])), shape=(n, n)).tocsr()
            deg = np.asarray(a.sum(axis=1)).ravel()
            inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
            mats.append(sp.diags(inv) @ a)
        return mats


def _atom_key(atom: Atom) -> tuple:
    idx = ELEMENTS.index(atom.element) if atom.element in ELEMENTS else len(ELEMENTS)
    return (idx, atom.aromatic, atom.charge)


def atom_features(atom: Atom) -> np.ndarray:
    f = np.zeros(NODE_FEATURES)
    f[_atom_key(atom)[0]] = 1.0
    f[len(ELEMENTS) + 1] = float(atom.aromatic)
    f[len(ELEMENTS) + 2] = float(atom.charge > 0)
    f[len(ELEMENTS) + 3] = float(atom.charge < 0)
    return f


def molecule_graph(mol: Molecule) -> RelGraph:
    """Nodes are atoms.  A message travelling from a lower-ranked atom type to a
    higher-ranked one (or between equal types) uses the forward relation of its
    bond order, the opposite direction the reverse one; the labelling depends
    only on atom types, so it does not change when atoms are renumbered."""
    if not mol.atoms:
        raise GraphError("empty molecule")
    feats = np.stack([atom_features(a) for a in mol.atoms])
    keys = [_atom_key(a) for a in mol.atoms]
    edges = []
    for b in mol.bonds:
        base = 2 * BOND_ORDERS.index(b.order)
        for src, dst in ((b.i, b.j), (b.j, b.i)):
            edges.append((dst, src, base + (1 if keys[src] > keys[dst] else 0)))
    return RelGraph(feats, edges)


def batch_graphs(graphs: Sequence[RelGraph]) -> tuple[RelGraph, np.ndarray]:
    """Disjoint union; returns the merged graph and each node's graph index."""
    feats, edges, owner = [], [], []
    offset = 0
    for g_idx, g in enumerate(graphs):
        feats.append(g.node_features)
        edges.extend((i + offset, j + offset, r) for i, j, r in g.edges)
        owner.append(np.full(g.num_nodes, g_idx))
        offset += g.num_nodes
    return RelGraph(np.concatenate(feats), edges, graphs[0].relation_count), np.concatenate(owner)


def mean_pool_matrix(owner: np.ndarray, n_groups: int) -> sp.csr_matrix:
    counts = np.bincount(owner, minlength=n_groups).astype(float)
    if np.any(counts == 0):
        raise GraphError("empty group in pooling")
    vals = 1.0 / counts[owner]
    return sp.csr_matrix((vals, (owner, np.arange(len(owner)))), shape=(n_groups, len(owner)))


class RGCNLayer(nn.Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, relations: int = NUM_RELATIONS):
        self.relations = relations
        self.w_rel = T.parameter(np.stack([nn.init_weight(rng, d_in, d_out).data for _ in range(relations)]))
        self.w_self = nn.init_weight(rng, d_in, d_out)

    def __call__(self, h: Tensor, adjacency: Sequence[sp.spmatrix]) -> Tensor:
        if len(adjacency) != self.relations:
            raise GraphError(f"layer expects {self.relations} relations, graph has {len(adjacency)}")
        msgs = T.concat([T.spmm(a, h) for a in adjacency], axis=1)
        r, d_in, d_out = self.w_rel.shape
        out = T.matmul(msgs, self.w_rel.reshape(r * d_in, d_out)) + T.matmul(h, self.w_self)
        return T.relu(out)


def rgcn_forward(g: RelGraph, layers: Sequence[RGCNLayer], features: Tensor | None = None) -> Tensor:
    h = features if features is not None else Tensor(g.node_features)
    if h.shape[1] != layers[0].w_self.shape[0]:
        raise GraphError(f"feature width {h.shape[1]} does not match layer input {layers[0].w_self.shape[0]}")
    adj = g.adjacency()
    for layer in layers:
        h = layer(h, adj)
    return h


class GraphEncoder(nn.Module):
    def __init__(self, rng: np.random.Generator, hidden: int = 64, out_width: int = 64, num_layers: int = 2):
        dims = [NODE_FEATURES] + [hidden] * num_layers
        self.layers = [RGCNLayer(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
        self.out = nn.Linear(rng, 2 * hidden, out_width)
        self.hidden = hidden
        self.out_width = out_width

    def embed_molecules(self, mols: Sequence[Molecule]) -> Tensor:
        graph, owner = batch_graphs([molecule_graph(m) for m in mols])
        h = rgcn_forward(graph, self.layers)
        return T.spmm(mean_pool_matrix(owner, len(mols)), h)

    def molecule_embed(self, mol: Molecule) -> Tensor:
        return self.embed_molecules([mol])[0]

    def reaction_halves(self, records: Sequence[ReactionRecord]) -> Tensor:
        """``[mean reactant embedding | mean product embedding]`` per record."""
        mols: list[Molecule] = []
        r_owner, p_owner = [], []
        for b, rec in enumerate(records):
            if not rec.reactants or not rec.products:
                raise GraphError("reaction needs reactants and products")
            r_owner.extend([b] * len(rec.reactants))
            mols.extend(rec.reactants)
        for b, rec in enumerate(records):
            p_owner.extend([b] * len(rec.products))
            mols.extend(rec.products)
        emb = self.embed_molecules(mols)
        owner = np.concatenate([r_owner, np.asarray(p_owner) + len(records)]).astype(np.int64)
        pooled = T.spmm(mean_pool_matrix(owner, 2 * len(records)), emb)
        B = len(records)
        return T.concat([pooled[:B], pooled[B:]], axis=1)

    def reaction_embed_batch(self, records: Sequence[ReactionRecord]) -> Tensor:
        return self.out(self.reaction_halves(records))

    def reaction_embed(self, record: ReactionRecord) -> Tensor:
        return self.reaction_embed_batch([record])[0]


def molecule_embed(mol: Molecule, enc: GraphEncoder) -> Tensor:
    return enc.molecule_embed(mol)


def reaction_graph_embed(record: ReactionRecord, enc: GraphEncoder) -> Tensor:
    return enc.reaction_embed(record)
