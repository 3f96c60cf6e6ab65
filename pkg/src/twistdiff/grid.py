"""Composite discretization: Cartesian background plus polar puncture patches.

Each puncture carries a polar patch in its local coordinate t = (z - p)/R
with geometrically graded radii (uniform spacing in s = log r, so the
patch is a uniform grid in the conformal coordinate w = s + i theta). The
background is a uniform Cartesian lattice covering the chart box (sphere
mode) or the unit-square fundamental domain (torus mode); background
nodes inside the unit disks |t| < 1 are dropped.

The discretization has two layers.

Energy layer: a single edge list over the combined node set, with every
edge interior to one patch. Each edge carries a conformal weight chosen
so that

    E = (1/8) * sum_e w_e (L_src - L_dst - sigma_e)^2

is a consistent quadrature of the Dirichlet integral (1/8) int |grad L|^2
in every patch: w = 1 on the square lattice, dtheta/ds for radial and
ds/dtheta for angular polar edges. Torus identification edges are tagged
with the generator crossing so the energy can apply the twist shift;
edges with both endpoints in a half-disk |t| <= 1/2 are tagged as tail
edges for the modified-energy split.

Solver layer: a row table (owner, neighbour, weight, sigma index, sign)
listing, per node, the entries of its discrete Laplace equation. Interior
rows coincide with the incident energy edges. Across the seam the
coupling is one-way interpolation, which keeps the stencils pointwise
consistent (second-order accurate): the outer polar ring uses a
Shortley-Weller radial stencil whose outward arm ends at a ghost point a
few radial steps beyond r = 1, evaluated by bilinear interpolation from
the four enclosing lattice nodes; a lattice node next to the excised
disk keeps its five-point stencil with the missing leg evaluated by
bilinear interpolation inside the polar patch. Row sigma indices point
into an extended shift table of num_edges + 3 rows: per-edge shifts,
then a zero row for seam entries, then the two generator shifts for seam
legs that cross a torus identification.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .flat_bundle import SurfaceSpec

# Tag values for Edge.gen: generator crossed by a torus identification edge.
GEN_NONE, GEN_A, GEN_B = 0, 1, 2


@dataclass(frozen=True)
class PolarPatch:
    """Uniform (s, theta) grid on the annulus r_min <= |t| <= 1."""

    offset: int           # index of node (0, 0) in the composite node list
    n_s: int              # number of radial rings
    n_theta: int          # number of angular samples (periodic)
    s_values: np.ndarray  # (n_s,), increasing, s_values[-1] == 0

    @property
    def ds(self):
        return float(self.s_values[1] - self.s_values[0])

    @property
    def dtheta(self):
        return 2.0 * np.pi / self.n_theta

    @property
    def size(self):
        return self.n_s * self.n_theta

    @property
    def radii(self):
        return np.exp(self.s_values)

    def node(self, i_s, j_theta):
        return self.offset + i_s * self.n_theta + np.mod(j_theta, self.n_theta)

    def ring_nodes(self, i_s):
        return self.offset + i_s * self.n_theta + np.arange(self.n_theta)

    def ring_at_radius(self, r):
        """Index of the ring closest to local radius r."""
        return int(np.argmin(np.abs(self.s_values - np.log(r))))


def _bilinear(fx, fy):
    """Corner offsets and weights for a point at fractions (fx, fy) in a cell."""
    return (
        ((0, 0), (1.0 - fx) * (1.0 - fy)),
        ((1, 0), fx * (1.0 - fy)),
        ((0, 1), (1.0 - fx) * fy),
        ((1, 1), fx * fy),
    )


class CompositeGrid:
    """Node set, edge list and patch bookkeeping for one surface.

    Attributes (all arrays over the composite node index):
      pos      complex chart coordinate of each node
      patch_id -1 for background nodes, else the puncture index
      local_r  local radius |t| for polar nodes, +inf for background
      is_bdry  True on frozen chart-box boundary nodes (sphere mode)

    Energy edges: edge_src, edge_dst (int32), edge_w (float64), edge_gen
    (int8 generator tag) and edge_tail (bool). Solver rows: row_owner,
    row_nbr (int32), row_w (float64), row_eid (int32 index into the
    extended shift table of num_sigma = num_edges + 3 rows; sig_zero and
    sig_gen name the extra rows) and row_sign (float64).
    """

    def __init__(self, surface: SurfaceSpec, bg_res=128, n_theta=256,
                 radial_ratio=1.02, r_min=0.02):
        if r_min <= 0 or r_min >= 0.5:
            raise ConfigError("r_min must lie in (0, 1/2)")
        if radial_ratio <= 1.0:
            raise ConfigError("radial grading ratio must exceed 1")
        self.surface = surface
        self.r_min = float(r_min)
        R = surface.disk_radius
        ps = surface.puncture_array

        if surface.mode == "torus":
            x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
        else:
            x0, x1, y0, y1 = surface.box
        self.h = (x1 - x0) / bg_res
        h = self.h

        # --- background lattice ------------------------------------------
        if surface.mode == "torus":
            nx, ny = bg_res, bg_res
            xs = x0 + h * np.arange(nx)
            ys = y0 + h * np.arange(ny)
        else:
            nx = bg_res + 1
            ny = int(round((y1 - y0) / h)) + 1
            xs = x0 + h * np.arange(nx)
            ys = y0 + h * np.arange(ny)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        Z = X + 1j * Y
        dist = np.full(Z.shape, np.inf)
        for p in ps:
            dist = np.minimum(dist, np.abs(Z - p))

        # Sharp partition at |t| = 1: the lattice keeps only nodes outside
        # every unit disk, and each polar patch reaches exactly to r = 1.
        # The ghost ring of a patch sits m_ghost radial steps beyond r = 1,
        # just far enough that its enclosing lattice cells are fully
        # admitted (cut-cell seam; the leg stays O(h) long).
        ds_target = np.log(radial_ratio)
        n_s = max(3, int(round(np.log(1.0 / r_min) / ds_target)) + 1)
        s_values = np.linspace(np.log(r_min), 0.0, n_s)
        ds = float(s_values[1] - s_values[0])
        corner_reach = (np.sqrt(2.0) + 0.51) * h / R
        m_ghost = 1
        while np.exp(m_ghost * ds) - corner_reach < 1.0:
            m_ghost += 1
            if m_ghost * ds > 0.7:
                raise ConfigError(
                    "background lattice too coarse relative to the polar "
                    "patch; increase background resolution"
                )
        self.m_ghost = m_ghost
        admitted = dist >= R
        self.bg_nx, self.bg_ny = nx, ny
        self.bg_x0, self.bg_y0 = x0, y0
        # composite index of each lattice point, -1 where dropped
        bg_index = -np.ones((nx, ny), dtype=np.int64)
        bg_index[admitted] = np.arange(np.count_nonzero(admitted))
        self.bg_index = bg_index
        n_bg = np.count_nonzero(admitted)

        pos = [Z[admitted]]
        patch_id = [np.full(n_bg, -1, dtype=np.int16)]
        local_r = [np.full(n_bg, np.inf)]
        if surface.mode == "torus":
            is_bdry = [np.zeros(n_bg, dtype=bool)]
        else:
            edge_mask = (X == xs[0]) | (X == xs[-1]) | (Y == ys[0]) | (Y == ys[-1])
            is_bdry = [edge_mask[admitted]]

        # --- polar patches -----------------------------------------------
        self.patches = []
        offset = n_bg
        for ip, p in enumerate(ps):
            patch = PolarPatch(offset, n_s, n_theta, s_values)
            self.patches.append(patch)
            th = patch.dtheta * np.arange(n_theta)
            T = np.exp(s_values[:, None] + 1j * th[None, :])
            pos.append((p + R * T).ravel())
            patch_id.append(np.full(patch.size, ip, dtype=np.int16))
            local_r.append(np.repeat(patch.radii, n_theta))
            is_bdry.append(np.zeros(patch.size, dtype=bool))
            offset += patch.size

        self.pos = np.concatenate(pos)
        self.patch_id = np.concatenate(patch_id)
        self.local_r = np.concatenate(local_r)
        self.is_bdry = np.concatenate(is_bdry)
        self.n_bg = n_bg
        self.num_nodes = offset

        self._build_edges(admitted, xs, ys)

    # ---------------------------------------------------------------- edges
    def _build_edges(self, admitted, xs, ys):
        surface = self.surface
        R = surface.disk_radius
        ps = surface.puncture_array
        bg_index = self.bg_index
        nx, ny = self.bg_nx, self.bg_ny
        src, dst, w, gen = [], [], [], []

        def add(s_arr, d_arr, w_arr, g=0):
            s_arr = np.atleast_1d(np.asarray(s_arr, dtype=np.int64))
            d_arr = np.atleast_1d(np.asarray(d_arr, dtype=np.int64))
            w_arr = np.broadcast_to(np.atleast_1d(np.asarray(w_arr, float)),
                                    s_arr.shape)
            keep = w_arr > 1e-14
            src.append(s_arr[keep])
            dst.append(d_arr[keep])
            w.append(w_arr[keep])
            gen.append(np.full(np.count_nonzero(keep), g, dtype=np.int8))

        # background lattice edges (unit weight), torus edges wrap with a tag
        a = bg_index[:-1, :]
        b = bg_index[1:, :]
        m = (a >= 0) & (b >= 0)
        add(a[m], b[m], 1.0)
        a = bg_index[:, :-1]
        b = bg_index[:, 1:]
        m = (a >= 0) & (b >= 0)
        add(a[m], b[m], 1.0)
        if surface.mode == "torus":
            a, b = bg_index[-1, :], bg_index[0, :]
            m = (a >= 0) & (b >= 0)
            add(a[m], b[m], 1.0, g=GEN_A)
            a, b = bg_index[:, -1], bg_index[:, 0]
            m = (a >= 0) & (b >= 0)
            add(a[m], b[m], 1.0, g=GEN_B)

        # polar patch edges in conformal (s, theta) coordinates
        for patch in self.patches:
            ns, nt = patch.n_s, patch.n_theta
            ds, dt = patch.ds, patch.dtheta
            idx = patch.offset + np.arange(ns * nt).reshape(ns, nt)
            add(idx[:-1, :].ravel(), idx[1:, :].ravel(), dt / ds)
            add(idx.ravel(), np.roll(idx, -1, axis=1).ravel(), ds / dt)

        self.edge_src = np.concatenate(src).astype(np.int32)
        self.edge_dst = np.concatenate(dst).astype(np.int32)
        self.edge_w = np.concatenate(w)
        self.edge_gen = np.concatenate(gen)
        rs = self.local_r[self.edge_src]
        rd = self.local_r[self.edge_dst]
        same = self.patch_id[self.edge_src] == self.patch_id[self.edge_dst]
        self.edge_tail = same & (rs <= 0.5) & (rd <= 0.5)
        self.num_edges = len(self.edge_src)
        # extended shift table: per-edge rows, a zero row, generator rows
        self.sig_zero = self.num_edges
        self.sig_gen = {GEN_A: self.num_edges + 1, GEN_B: self.num_edges + 2}
        self.num_sigma = self.num_edges + 3

        self._build_rows(admitted)

    # ----------------------------------------------------------- solver rows
    def _build_rows(self, admitted):
        """Assemble the one-way solver row table (see module docstring)."""
        E = self.num_edges
        ro, rn, rw, re, rs = [], [], [], [], []

        def add_row(owner, nbr, w, eid, sign):
            owner = np.atleast_1d(np.asarray(owner, dtype=np.int64))
            nbr = np.atleast_1d(np.asarray(nbr, dtype=np.int64))
            w = np.broadcast_to(np.atleast_1d(np.asarray(w, float)), owner.shape)
            eid = np.broadcast_to(np.atleast_1d(np.asarray(eid, np.int64)),
                                  owner.shape)
            sign = np.broadcast_to(np.atleast_1d(np.asarray(sign, float)),
                                   owner.shape)
            keep = w > 1e-14
            ro.append(owner[keep])
            rn.append(nbr[keep])
            rw.append(w[keep])
            re.append(eid[keep])
            rs.append(sign[keep])

        # interior rows: both half-edges of every energy edge, except rows
        # owned by the outer polar ring (replaced by Shortley-Weller rows)
        ring_owner = np.zeros(self.num_nodes, dtype=bool)
        for patch in self.patches:
            ring_owner[patch.ring_nodes(patch.n_s - 1)] = True
        for owner, nbr, sgn in ((self.edge_src, self.edge_dst, 1.0),
                                (self.edge_dst, self.edge_src, -1.0)):
            keep = ~ring_owner[owner]
            add_row(owner[keep], nbr[keep], self.edge_w[keep],
                    np.flatnonzero(keep), sgn)

        # outer-ring rows: Shortley-Weller radial stencil in s with arms
        # ds (inward) and ell = m_ghost * ds (outward to the ghost ring),
        # plus the standard angular second difference
        R = self.surface.disk_radius
        ps = self.surface.puncture_array
        for ip, patch in enumerate(self.patches):
            ds, dt = patch.ds, patch.dtheta
            ell = self.m_ghost * ds
            w_in = 2.0 / (ds * (ds + ell))
            w_gh = 2.0 / (ell * (ds + ell))
            w_ang = 1.0 / dt**2
            ring = patch.ring_nodes(patch.n_s - 1)
            add_row(ring, patch.ring_nodes(patch.n_s - 2), w_in,
                    self.sig_zero, 1.0)
            add_row(ring, np.roll(ring, 1), w_ang, self.sig_zero, 1.0)
            add_row(ring, np.roll(ring, -1), w_ang, self.sig_zero, 1.0)
            th = dt * np.arange(patch.n_theta)
            zg = ps[ip] + R * np.exp(ell) * np.exp(1j * th)
            for node, z in zip(ring, zg):
                for tgt, c, eid, sign in self._bg_corner_entries(z):
                    add_row(node, tgt, w_gh * c, eid, sign)

        # lattice rows next to the excised disks: the missing leg becomes a
        # unit-weight ghost value interpolated inside the polar patch
        h = self.h
        holes = ~admitted
        bg_index = self.bg_index
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            missing = np.zeros_like(holes)
            if self.surface.mode == "torus":
                missing = np.roll(holes, (-dx, -dy), axis=(0, 1))
            else:
                sx = slice(dx, None) if dx >= 0 else slice(None, dx)
                tx = slice(None, -dx) if dx > 0 else slice(-dx, None)
                sy = slice(dy, None) if dy >= 0 else slice(None, dy)
                ty = slice(None, -dy) if dy > 0 else slice(-dy, None)
                missing[tx, ty] = holes[sx, sy]
            for ix, iy in np.argwhere(admitted & missing):
                z_ghost = (self.bg_x0 + (ix + dx) * h
                           + 1j * (self.bg_y0 + (iy + dy) * h))
                node = int(bg_index[ix, iy])
                for tgt, c in self._polar_corner_entries(z_ghost):
                    add_row(node, tgt, c, self.sig_zero, 1.0)

        self.row_owner = np.concatenate(ro).astype(np.int32)
        self.row_nbr = np.concatenate(rn).astype(np.int32)
        self.row_w = np.concatenate(rw)
        self.row_eid = np.concatenate(re).astype(np.int32)
        self.row_sign = np.concatenate(rs)

    def _bg_corner_entries(self, z):
        """Bilinear corner entries (node, coeff, sigma index, sign) of the
        lattice cell containing chart point z, with torus wraps shifted."""
        fx = (z.real - self.bg_x0) / self.h
        fy = (z.imag - self.bg_y0) / self.h
        ix, iy = int(np.floor(fx)), int(np.floor(fy))
        nx, ny = self.bg_nx, self.bg_ny
        out = []
        for (ox, oy), c in _bilinear(fx - ix, fy - iy):
            jx, jy = ix + ox, iy + oy
            eid, sign = self.sig_zero, 1.0
            if self.surface.mode == "torus":
                if jx >= nx:
                    jx -= nx
                    eid, sign = self.sig_gen[GEN_A], 1.0
                elif jx < 0:
                    jx += nx
                    eid, sign = self.sig_gen[GEN_A], -1.0
                if jy >= ny:
                    jy -= ny
                    eid, sign = self.sig_gen[GEN_B], 1.0
                elif jy < 0:
                    jy += ny
                    eid, sign = self.sig_gen[GEN_B], -1.0
            if not (0 <= jx < nx and 0 <= jy < ny):
                raise ConfigError("polar ghost ring reaches outside the chart box")
            tgt = self.bg_index[jx, jy]
            if tgt < 0:
                raise ConfigError(
                    "polar ghost cell not admitted; increase background "
                    "resolution"
                )
            out.append((int(tgt), c, eid, sign))
        return out

    def _polar_corner_entries(self, z):
        """Bilinear corner entries (node, coeff) of the polar cell containing
        chart point z (which must lie inside one of the unit disks)."""
        ps = self.surface.puncture_array
        R = self.surface.disk_radius
        d = np.abs(z - ps)
        ip = int(np.argmin(d))
        if d[ip] >= R:
            raise ConfigError("lattice ghost leg does not land in a patch")
        patch = self.patches[ip]
        t = (z - ps[ip]) / R
        s = np.log(np.abs(t))
        th = np.angle(t) % (2.0 * np.pi)
        fs = (s - patch.s_values[0]) / patch.ds
        ft = th / patch.dtheta
        i_s = int(np.floor(fs))
        if not (0 <= i_s < patch.n_s - 1):
            i_s = min(max(i_s, 0), patch.n_s - 2)
        j_t = int(np.floor(ft)) % patch.n_theta
        return [(int(patch.node(i_s + os_, j_t + ot)), c)
                for (os_, ot), c in _bilinear(fs - i_s, ft - np.floor(ft))]

    # ------------------------------------------------------------- helpers
    def free_mask(self, phase="all", patch=None, r_inner=None, r_outer=None):
        """Boolean mask of nodes relaxed during a solve phase.

        phase "compact": background plus polar nodes with |t| > 1/2 (chart
        boundary stays frozen). phase "annulus": nodes of one patch with
        r_inner < |t| < r_outer. phase "all": everything except the chart
        boundary and the innermost pinned ring of each patch.
        """
        free = np.zeros(self.num_nodes, dtype=bool)
        if phase == "compact":
            free[:] = True
            free[self.local_r <= 0.5] = False
        elif phase == "annulus":
            if patch is None or r_inner is None:
                raise ConfigError("annulus phase needs patch and r_inner")
            r_outer = 1.0 if r_outer is None else r_outer
            sel = self.patch_id == patch
            free[sel] = ((self.local_r[sel] > r_inner * (1 + 1e-12))
                         & (self.local_r[sel] < r_outer * (1 - 1e-12)))
        elif phase == "all":
            free[:] = True
            for p in self.patches:
                free[p.ring_nodes(0)] = False
        else:
            raise ConfigError(f"unknown phase {phase!r}")
        free[self.is_bdry] = False
        return free

    def sweep_plan(self, free):
        """Colored sweep schedule over the solver rows for the free nodes."""
        from .kernels import SweepPlan

        return SweepPlan(self.num_nodes, self.row_owner, self.row_nbr,
                         self.row_w, self.row_eid, self.row_sign, free)

    def node_area(self):
        """Quadrature weight per node: h^2 on the lattice, ds dtheta |t|^2 R^2
        on polar patches (Euclidean chart area of the conformal cell)."""
        area = np.full(self.num_nodes, self.h**2)
        R = self.surface.disk_radius
        for patch in self.patches:
            cell = patch.ds * patch.dtheta * (R * np.repeat(patch.radii, patch.n_theta)) ** 2
            area[patch.offset:patch.offset + patch.size] = cell
        return area

    def patch_view(self, values, ip):
        """Reshape per-node values of patch ip to (n_s, n_theta, ...)."""
        p = self.patches[ip]
        v = values[p.offset:p.offset + p.size]
        return v.reshape((p.n_s, p.n_theta) + v.shape[1:])

    def bg_view(self, values, fill=np.nan):
        """Scatter per-node background values onto the (nx, ny) lattice."""
        shape = (self.bg_nx, self.bg_ny) + values.shape[1:]
        out = np.full(shape, fill, dtype=values.dtype)
        out[self.bg_index >= 0] = values[:self.n_bg]
        return out
