"""Model metrics with prescribed pole behaviour near punctures.

All supported configurations are diagonal: the representation images and
the singular data act slot by slot, so the model metric is diag(exp d_j)
with real scalar profiles d_j. Two profiles are provided.

Second kind (pole order k+1 >= 2): per slot, near each puncture with
local coordinate t = (z - p)/R,

    d_j = sum_k 2 a_k u_k(t),   u_k(t) = Re(t^-k) + 4^k Re(t^k).

u_k is harmonic away from t = 0 and its mirror term makes the radial
derivative vanish on |t| = 1/2, so the profile restricts cleanly to the
half-disk used for the exhaustion. The derivative of the metric then has
leading Laurent coefficient -k a_k at order t^(-k-1) in the local frame.

Third kind (simple poles): per slot, d_j = sum_i 2 a_i log|z - p_i| over
all punctures, requiring the residues a_i to sum to zero. This profile is
harmonic on the whole chart minus the punctures, so with matching
boundary data it is itself the energy minimizer; it doubles as an exact
oracle. An alternative single-disk construction via an explicit rational
function g with reflected poles is provided as well (style "g").
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigError
from .flat_bundle import SecondKindData, SingularData, SurfaceSpec


def u_k_second(t, k):
    """Mirror profile Re(t^-k) + 4^k Re(t^k); Neumann on the circle |t|=1/2."""
    t = np.asarray(t, dtype=complex)
    return np.real(t ** (-k)) + 4.0**k * np.real(t ** k)


def du_k_second(t, k):
    """Complex t-derivative of u_k_second (derivative of Re f is f'/2)."""
    t = np.asarray(t, dtype=complex)
    return 0.5 * k * (-(t ** (-k - 1)) + 4.0**k * t ** (k - 1))


def smoothstep(x):
    """C^1 ramp 3x^2 - 2x^3 clamped to [0, 1]."""
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def third_kind_g(z, points, weights, R_gamma):
    """Explicit third-kind profile on the disk |z| < R_gamma.

    Returns (d, phi) for d = log|g|^2 with

        g(z) = z^L / prod_i (z - xi_i)^l_i (z - xi_i')^l_i,

    where L = sum l_i and xi_i' = R_gamma^2 / conj(xi_i) is the circle
    inversion of xi_i. d is harmonic away from 0 and the xi_i, phi = dd/dz
    has residue L at the origin and -l_i at each xi_i, and the reflected
    poles cancel the radial derivative of d on |z| = R_gamma.
    """
    z = np.asarray(z, dtype=complex)
    points = np.asarray(points, dtype=complex)
    weights = np.asarray(weights, dtype=float)
    if np.any(np.abs(points) >= R_gamma) or np.any(np.abs(points) == 0):
        raise ConfigError("g-construction points must lie in the punctured disk")
    L = weights.sum()
    d = 2.0 * L * np.log(np.abs(z))
    phi = L / z
    for xi, l in zip(points, weights):
        xr = R_gamma**2 / np.conj(xi)
        d = d - 2.0 * l * (np.log(np.abs(z - xi)) + np.log(np.abs(z - xr)))
        phi = phi - l * (1.0 / (z - xi) + 1.0 / (z - xr))
    return d, phi


@dataclass(frozen=True)
class ModelMetric:
    """Diagonal model metric K0 = diag(exp d_j) built from singular data.

    style "log" is the default described in the module docstring; style
    "g" replaces the third-kind profile by the rational-function
    construction on the disk |z - center| < R_gamma with integerized
    residues (denominator q).
    """

    surface: SurfaceSpec
    singular: SingularData
    style: str = "log"
    R_gamma: float = None
    g_center: complex = 0j

    def __post_init__(self):
        if self.style not in ("log", "g"):
            raise ConfigError(f"unknown model style {self.style!r}")
        if self.style == "g":
            if self.singular.kind != "third":
                raise ConfigError("style 'g' only applies to third-kind data")
            if self.R_gamma is None:
                raise ConfigError("style 'g' requires R_gamma")

    @property
    def n(self):
        return self.singular.n

    def _g_weights(self, j):
        """Integerize slot-j residues as l_i / q with a common denominator."""
        res = [d.residues[j] for d in self.singular.per_puncture]
        qmax = self.singular.rational_denominator_bound
        fracs = [Fraction(a).limit_denominator(qmax) for a in res]
        for a, f in zip(res, fracs):
            if abs(float(f) - a) > 1e-9:
                raise ConfigError(f"residue {a} not rational within denominator {qmax}")
        q = int(np.lcm.reduce([f.denominator for f in fracs])) if fracs else 1
        ls = np.array([-int(f * q) for f in fracs], dtype=float)
        return ls, q

    def log_diag(self, z):
        """Per-slot log model d_j at chart points z; shape z.shape + (n,)."""
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape + (self.n,))
        ps = self.surface.puncture_array
        R = self.surface.disk_radius
        if self.singular.kind == "second":
            for p, data in zip(ps, self.singular.per_puncture):
                t = (z - p) / R
                for j, slot in enumerate(data.slots):
                    for k, a in slot:
                        out[..., j] += 2.0 * a * u_k_second(t, k)
        elif self.style == "log":
            for p, data in zip(ps, self.singular.per_puncture):
                r = np.abs(z - p)
                for j, a in enumerate(data.residues):
                    out[..., j] += 2.0 * a * np.log(r)
        else:
            for j in range(self.n):
                ls, q = self._g_weights(j)
                d, _ = third_kind_g(z - self.g_center, ps - self.g_center, ls, self.R_gamma)
                out[..., j] = d / q
        return out

    def phi_diag(self, z):
        """Per-slot z-derivative of log_diag (the model one-form dd/dz)."""
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape + (self.n,), dtype=complex)
        ps = self.surface.puncture_array
        R = self.surface.disk_radius
        if self.singular.kind == "second":
            for p, data in zip(ps, self.singular.per_puncture):
                t = (z - p) / R
                for j, slot in enumerate(data.slots):
                    for k, a in slot:
                        out[..., j] += 2.0 * a * du_k_second(t, k) / R
        elif self.style == "log":
            for p, data in zip(ps, self.singular.per_puncture):
                inv = 1.0 / (z - p)
                for j, a in enumerate(data.residues):
                    out[..., j] += a * inv
        else:
            for j in range(self.n):
                ls, q = self._g_weights(j)
                _, phi = third_kind_g(z - self.g_center, ps - self.g_center, ls, self.R_gamma)
                out[..., j] = phi / q
        return out

    def log_matrix(self, z):
        """Matrix-valued log model: diagonal embedding of log_diag."""
        d = self.log_diag(z)
        out = np.zeros(d.shape + (self.n,), dtype=complex)
        idx = np.arange(self.n)
        out[..., idx, idx] = d
        return out

    def log_diag_blended(self, z, inner=1.0, outer=1.5):
        """Log model tapered to zero over the collar inner < |t| < outer.

        Sums per-puncture local profiles weighted by a smoothstep cutoff
        in the local radius, giving a globally defined field that agrees
        with the model inside |t| <= inner and vanishes beyond outer.
        """
        if not inner < outer:
            raise ConfigError("blending collar must have inner < outer")
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape + (self.n,))
        ps = self.surface.puncture_array
        R = self.surface.disk_radius
        if self.singular.kind != "second" or self.style != "log":
            # fall back to a single global cutoff around the nearest puncture
            rmin = np.min(np.abs(z[..., None] - ps), axis=-1) / R
            w = 1.0 - smoothstep((rmin - inner) / (outer - inner))
            return self.log_diag(z) * w[..., None]
        for p, data in zip(ps, self.singular.per_puncture):
            t = (z - p) / R
            w = 1.0 - smoothstep((np.abs(t) - inner) / (outer - inner))
            for j, slot in enumerate(data.slots):
                for k, a in slot:
                    out[..., j] += 2.0 * a * u_k_second(t, k) * w
        return out
