"""Sweep plans: colored Gauss-Seidel schedules over a solver row table.

A plan fixes, for a given set of free nodes, the exact update order used
by the relaxation kernels. The input is a row table: per entry an owner
node, a neighbour node, a weight, a shift index (row into the sigma
array handed to the kernels) and the sign with which the shift enters.
The update of a free node replaces its value by the weighted average of
w * (value[nbr] + sign * sigma[eid]) over its row entries.

Free nodes are grouped by a greedy graph coloring of the row adjacency
(owner-neighbour pairs, symmetrized): nodes of one color never read each
other, so updates within a color commute and the sweep result is
independent of traversal order within a color. Per free node the plan
stores its row entries in CSR form.
"""
from __future__ import annotations

import numpy as np


class SweepPlan:
    def __init__(self, num_nodes, row_owner, row_nbr, row_w, row_eid,
                 row_sign, free_mask):
        free_mask = np.asarray(free_mask, dtype=bool)
        self.free_mask = free_mask
        row_owner = np.asarray(row_owner)
        row_nbr = np.asarray(row_nbr)

        keep = free_mask[row_owner]
        owners = row_owner[keep]
        others = row_nbr[keep]
        ww = np.asarray(row_w, float)[keep]
        eid = np.asarray(row_eid)[keep].astype(np.int32)
        sign = np.asarray(row_sign, float)[keep]

        colors = self._greedy_colors(num_nodes, row_owner, row_nbr, free_mask)
        free_nodes = np.flatnonzero(free_mask)
        order = np.lexsort((free_nodes, colors[free_nodes]))
        self.nodes = free_nodes[order].astype(np.int32)
        node_colors = colors[self.nodes]
        self.n_colors = int(node_colors[-1]) + 1 if len(self.nodes) else 0
        self.color_ptr = np.searchsorted(
            node_colors, np.arange(self.n_colors + 1)).astype(np.int32)

        # CSR row-entry layout in sweep order
        rank = np.full(num_nodes, -1, dtype=np.int64)
        rank[self.nodes] = np.arange(len(self.nodes))
        he_order = np.argsort(rank[owners], kind="stable")
        self.he_nbr = others[he_order].astype(np.int32)
        self.he_w = ww[he_order]
        self.he_edge = eid[he_order]
        self.he_sign = sign[he_order]
        counts = np.bincount(rank[owners], minlength=len(self.nodes))
        if np.any(counts == 0):
            raise ValueError("free node with no solver row entries")
        self.ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
        self.wsum = np.add.reduceat(self.he_w, self.ptr[:-1]) \
            if len(self.nodes) else np.empty(0)

    @classmethod
    def from_edges(cls, num_nodes, edge_src, edge_dst, edge_w, free_mask):
        """Plan for a plain symmetric edge list (both half-edge directions)."""
        edge_src = np.asarray(edge_src)
        edge_dst = np.asarray(edge_dst)
        edge_w = np.asarray(edge_w, float)
        eid = np.arange(len(edge_src), dtype=np.int32)
        ones = np.ones(len(edge_src))
        return cls(num_nodes,
                   np.concatenate([edge_src, edge_dst]),
                   np.concatenate([edge_dst, edge_src]),
                   np.concatenate([edge_w, edge_w]),
                   np.concatenate([eid, eid]),
                   np.concatenate([ones, -ones]),
                   free_mask)

    @staticmethod
    def _greedy_colors(num_nodes, row_owner, row_nbr, free_mask):
        """Greedy coloring of the free row adjacency in node-index order."""
        both = free_mask[row_owner] & free_mask[row_nbr]
        s, d = row_owner[both], row_nbr[both]
        owners = np.concatenate([s, d])
        others = np.concatenate([d, s])
        order = np.argsort(owners, kind="stable")
        owners, others = owners[order], others[order]
        ptr = np.searchsorted(owners, np.arange(num_nodes + 1))
        colors = np.full(num_nodes, -1, dtype=np.int32)
        for i in np.flatnonzero(free_mask):
            used = set(colors[others[ptr[i]:ptr[i + 1]]].tolist())
            c = 0
            while c in used:
                c += 1
            colors[i] = c
        return colors
