"""Tanner graph of a parity-check matrix with precomputed extrinsic index tables.

Edges are numbered densely in row-major order of the ones of H, so a message
state is a flat array indexed by edge id. The extrinsic tables are also kept in
padded rectangular form (pad value = ``num_edges``) so the decoders can gather
a whole iteration at once: append a sentinel column holding the neutral element
(0 for sums, 1 for products) and index with the padded table.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codes import ParityCheckMatrix


def _pad(lists, width, fill):
    out = np.full((len(lists), max(width, 0)), fill, dtype=np.int64)
    for i, ids in enumerate(lists):
        out[i, :len(ids)] = ids
    return out


@dataclass(frozen=True, eq=False)
class TannerGraph:
    code: ParityCheckMatrix
    edge_check: np.ndarray      # (E,) check index of each edge
    edge_var: np.ndarray        # (E,) variable index of each edge
    var_edges: tuple            # per variable: edge ids, N(v)
    check_edges: tuple          # per check: edge ids, N(c)
    extrinsic_var: tuple        # per edge: N(v) minus the edge
    extrinsic_check: tuple      # per edge: N(c) minus the edge
    var_table: np.ndarray       # (n, max_var_deg) padded N(v)
    ext_var_table: np.ndarray   # (E, max_var_deg - 1) padded
    ext_check_table: np.ndarray  # (E, max_check_deg - 1) padded

    @property
    def num_edges(self) -> int:
        return len(self.edge_var)

    @property
    def num_vars(self) -> int:
        return self.code.num_vars

    @property
    def num_checks(self) -> int:
        return self.code.num_checks

    @property
    def edges(self):
        return list(zip(self.edge_check.tolist(), self.edge_var.tolist()))

    @property
    def max_var_degree(self) -> int:
        return self.var_table.shape[1]

    @property
    def max_check_degree(self) -> int:
        return self.ext_check_table.shape[1] + 1

    @property
    def pad_id(self) -> int:
        return self.num_edges


def build(H: ParityCheckMatrix) -> TannerGraph:
    h = H.entries
    checks, vars_ = np.nonzero(h)  # row-major scan
    num_edges = len(checks)
    var_edges = tuple(tuple(np.nonzero(vars_ == v)[0].tolist()) for v in range(h.shape[1]))
    check_edges = tuple(tuple(np.nonzero(checks == c)[0].tolist()) for c in range(h.shape[0]))
    ext_var = tuple(tuple(e2 for e2 in var_edges[vars_[e]] if e2 != e) for e in range(num_edges))
    ext_check = tuple(tuple(e2 for e2 in check_edges[checks[e]] if e2 != e) for e in range(num_edges))
    dv = max(len(x) for x in var_edges)
    dc = max(len(x) for x in check_edges)
    for arr in (checks, vars_):
        arr.setflags(write=False)
    return TannerGraph(
        code=H,
        edge_check=checks,
        edge_var=vars_,
        var_edges=var_edges,
        check_edges=check_edges,
        extrinsic_var=ext_var,
        extrinsic_check=ext_check,
        var_table=_pad(var_edges, dv, num_edges),
        ext_var_table=_pad(ext_var, dv - 1, num_edges),
        ext_check_table=_pad(ext_check, dc - 1, num_edges),
    )


def gather(messages, indices) -> np.ndarray:
    """Values of ``messages`` at the given edge ids, in table order."""
    messages = np.asarray(messages)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= messages.shape[-1]):
        raise IndexError(f"edge id out of range 0..{messages.shape[-1] - 1}")
    return messages[..., idx]


def gather_padded(messages, table, fill: float) -> np.ndarray:
    """Gather along the last axis with a padded table; padding yields ``fill``."""
    messages = np.asarray(messages, dtype=float)
    sentinel = np.full(messages.shape[:-1] + (1,), fill)
    return np.concatenate([messages, sentinel], axis=-1)[..., table]
