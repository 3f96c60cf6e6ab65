"""Surfaces, punctures, fundamental-group representations and holonomy.

The surface is either a coordinate chart of the sphere (trivial holonomy)
or the square torus with generators a: x -> x+1 and b: y -> y+1. The
representation is defined on the fundamental group of the *compact*
surface, so puncture loops carry identity holonomy and flat frames are
single-valued near punctures; twists act only across fundamental-domain
edges on the torus.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigError, SingularMatrixError
from .pd_geometry import congruence_act

TORUS_COMMUTATOR_TOL = 1e-12


@dataclass(frozen=True)
class SurfaceSpec:
    """Punctured surface at desk scale.

    punctures are chart coordinates; disk_radius is the chart radius of
    the unit disk of each puncture's local coordinate t_i = (z - p_i)/R.
    box gives the chart truncation (xmin, xmax, ymin, ymax) in
    sphere_chart mode; the torus fundamental domain is the unit square.
    """

    mode: str
    punctures: tuple
    disk_radius: float
    box: tuple = None

    def __post_init__(self):
        if self.mode not in ("sphere_chart", "torus"):
            raise ConfigError(f"unknown surface mode {self.mode!r}")
        ps = np.asarray(self.punctures, dtype=complex)
        R = self.disk_radius
        if R <= 0:
            raise ConfigError("disk_radius must be positive")
        for i in range(len(ps)):
            for j in range(i + 1, len(ps)):
                if abs(ps[i] - ps[j]) <= 2.0 * R:
                    raise ConfigError(
                        f"punctures {i} and {j} closer than twice the disk radius"
                    )
        if self.mode == "torus":
            for i, p in enumerate(ps):
                x, y = p.real, p.imag
                margin = min(x, 1.0 - x, y, 1.0 - y)
                if margin <= R:
                    raise ConfigError(
                        f"puncture {i} within one disk radius of the fundamental-domain edge"
                    )
        else:
            if self.box is None:
                raise ConfigError("sphere_chart mode requires a chart box")
            x0, x1, y0, y1 = self.box
            if not (x0 < x1 and y0 < y1):
                raise ConfigError("degenerate chart box")
            for i, p in enumerate(ps):
                if not (
                    x0 + R < p.real < x1 - R and y0 + R < p.imag < y1 - R
                ):
                    raise ConfigError(
                        f"puncture {i} within one disk radius of the chart boundary"
                    )

    @property
    def puncture_array(self):
        return np.asarray(self.punctures, dtype=complex)

    @property
    def num_punctures(self):
        return len(self.punctures)


@dataclass(frozen=True)
class Representation:
    """Linear representation of pi_1 of the compact surface.

    generator_images is empty for sphere_chart and [rho(a), rho(b)] for
    the torus; the two images must commute (pi_1 of the torus is abelian).
    """

    n: int
    generator_images: tuple = ()

    def __post_init__(self):
        imgs = [np.asarray(g, dtype=complex) for g in self.generator_images]
        for g in imgs:
            if g.shape != (self.n, self.n):
                raise ConfigError("generator image has wrong shape")
            if abs(np.linalg.det(g)) < 1e-300 or np.linalg.cond(g) > 1e12:
                raise SingularMatrixError("generator image is singular")
        if len(imgs) == 2:
            comm = imgs[0] @ imgs[1] - imgs[1] @ imgs[0]
            scale = max(np.max(np.abs(imgs[0])) * np.max(np.abs(imgs[1])), 1.0)
            if np.max(np.abs(comm)) > TORUS_COMMUTATOR_TOL * scale:
                raise ConfigError("torus generator images do not commute")
        object.__setattr__(self, "generator_images", tuple(map(np.asarray, imgs)))

    @property
    def generator_names(self):
        return ("a", "b")[: len(self.generator_images)]

    @property
    def is_trivial(self):
        return all(
            np.allclose(g, np.eye(self.n)) for g in self.generator_images
        )

    @property
    def is_diagonal(self):
        return all(
            np.allclose(g, np.diag(np.diag(g))) for g in self.generator_images
        )

    def image(self, name):
        try:
            return self.generator_images[self.generator_names.index(name)]
        except ValueError:
            raise ConfigError(f"unknown generator {name!r}") from None


_WORD_TOKEN = re.compile(r"([a-z])(?:\^(-?\d+))?|(\S)")


def parse_word(word):
    """Parse 'a b^-1 a^2' into [('a', 1), ('b', -1), ('a', 2)]."""
    if isinstance(word, (list, tuple)):
        return [(str(s), int(e)) for s, e in word]
    out = []
    for m in _WORD_TOKEN.finditer(word):
        if m.group(3) is not None:
            raise ConfigError(f"bad token {m.group(3)!r} in word {word!r}")
        out.append((m.group(1), int(m.group(2) or 1)))
    return out


def holonomy(rep: Representation, word):
    """Ordered product of generator images (and inverses) along a word."""
    out = np.eye(rep.n, dtype=complex)
    for sym, exp in parse_word(word):
        g = rep.image(sym)
        m = np.linalg.matrix_power(g, exp) if exp >= 0 else np.linalg.matrix_power(
            np.linalg.inv(g), -exp
        )
        out = out @ m
    return out


def equivariant_wrap(rep: Representation, H, generator, direction=1):
    """Transport a metric value across a fundamental-domain edge.

    Returns rho(generator)^(+-1) o H under the congruence action; used to
    fill ghost nodes when a stencil crosses an identified edge.
    """
    g = rep.image(generator)
    if direction < 0:
        g = np.linalg.inv(g)
    return congruence_act(g, H)


@dataclass(frozen=True)
class SemisimplicityReport:
    verdict: str
    radical_dim: int
    algebra_dim: int

    @property
    def semisimple(self):
        return self.verdict == "semisimple"


def _orth_extend(basis, cand, tol=1e-10):
    """Extend an orthonormal basis of vectorized matrices by a candidate."""
    v = cand.ravel().astype(complex)
    for b in basis:
        v = v - np.vdot(b, v) * b
    nrm = np.linalg.norm(v)
    if nrm > tol * max(np.linalg.norm(cand), 1.0):
        basis.append(v / nrm)
        return True
    return False


def semisimplicity_check(rep: Representation, tol=1e-10) -> SemisimplicityReport:
    """Complete-reducibility test of the algebra generated by the image.

    Builds the unital matrix algebra spanned by all words in the
    generator images and their inverses, then computes the radical as the
    null space of the trace pairing (x, y) -> tr(xy) restricted to the
    algebra; the verdict is semisimple iff the radical is zero.
    """
    n = rep.n
    gens = [np.asarray(g, dtype=complex) for g in rep.generator_images]
    gens += [np.linalg.inv(g) for g in rep.generator_images]
    basis = []
    _orth_extend(basis, np.eye(n, dtype=complex), tol)
    frontier = list(basis)
    while frontier and len(basis) < n * n:
        new = []
        for v in frontier:
            m = v.reshape(n, n)
            for g in gens:
                for cand in (g @ m, m @ g):
                    before = len(basis)
                    if _orth_extend(basis, cand, tol):
                        new.append(basis[before])
        frontier = new
    dim = len(basis)
    mats = [b.reshape(n, n) for b in basis]
    gram = np.empty((dim, dim), dtype=complex)
    for i in range(dim):
        for j in range(dim):
            gram[i, j] = np.trace(mats[i] @ mats[j])
    sv = np.linalg.svd(gram, compute_uv=False)
    radical_dim = int(np.sum(sv <= tol * max(sv[0], 1.0)))
    verdict = "semisimple" if radical_dim == 0 else "not_semisimple"
    return SemisimplicityReport(verdict=verdict, radical_dim=radical_dim, algebra_dim=dim)


@dataclass(frozen=True)
class SecondKindData:
    """Per-slot lists of (k, a_k) exponent/coefficient pairs."""

    slots: tuple  # tuple over slots of tuple[(k, a_k), ...]

    kind = "second"

    def __post_init__(self):
        for slot in self.slots:
            for k, a in slot:
                if int(k) < 1:
                    raise ConfigError("second-kind exponent k must be >= 1")
        object.__setattr__(
            self,
            "slots",
            tuple(tuple((int(k), float(a)) for k, a in slot) for slot in self.slots),
        )

    @property
    def n(self):
        return len(self.slots)

    @property
    def is_zero(self):
        return all(all(a == 0.0 for _, a in slot) for slot in self.slots)


@dataclass(frozen=True)
class ThirdKindData:
    """Residue vector (a_1 .. a_n) of simple log poles at one puncture."""

    residues: tuple

    kind = "third"

    def __post_init__(self):
        object.__setattr__(self, "residues", tuple(float(a) for a in self.residues))

    @property
    def n(self):
        return len(self.residues)

    @property
    def is_zero(self):
        return all(a == 0.0 for a in self.residues)


@dataclass(frozen=True)
class SingularData:
    """Per-puncture singularity prescriptions (all second or all third kind)."""

    per_puncture: tuple
    rational_denominator_bound: int = 64

    def __post_init__(self):
        kinds = {d.kind for d in self.per_puncture}
        if len(kinds) > 1:
            raise ConfigError("mixed second/third kind prescriptions are unsupported")
        ns = {d.n for d in self.per_puncture}
        if len(ns) > 1:
            raise ConfigError("inconsistent slot counts across punctures")

    @property
    def kind(self):
        return self.per_puncture[0].kind if self.per_puncture else "second"

    @property
    def n(self):
        return self.per_puncture[0].n if self.per_puncture else 0

    def validate_third_kind(self, check_rational=False):
        """Existence hypotheses: slotwise zero residue sums, rational ratios."""
        if self.kind != "third":
            return
        res = np.array([d.residues for d in self.per_puncture])  # (s, n)
        sums = res.sum(axis=0)
        if np.max(np.abs(sums)) > 1e-10 * max(np.max(np.abs(res)), 1.0):
            raise ConfigError(
                f"third-kind residues must sum to zero in every slot (sums {sums})"
            )
        if check_rational:
            qmax = self.rational_denominator_bound
            for j in range(res.shape[1]):
                col = res[:, j]
                nz = col[np.abs(col) > 0]
                if len(nz) < 2:
                    continue
                ref = nz[0]
                for v in nz[1:]:
                    frac = Fraction(v / ref).limit_denominator(qmax)
                    if abs(float(frac) - v / ref) > 1e-9:
                        raise ConfigError(
                            f"residue ratio {v / ref} in slot {j} not rational "
                            f"within denominator bound {qmax}"
                        )
