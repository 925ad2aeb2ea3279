"""Exact branched-cover ground truth.

A monic polynomial family P(z, w) = w^Q + c_{Q-1}(z) w^{Q-1} + ... + c_0(z)
with holomorphic coefficients defines a Q:1 cover of the plane away from
its discriminant. Sampling the fiber over every grid node produces the
model Q-valued fields; implicit differentiation of the defining equation
gives their exact branch derivatives, against which the finite-difference
machinery is validated. The plane is identified with C by (x, y) = x + iy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .qfield import GridDomain, QGridField

_ROOT_RESIDUAL_TOL = 1e-12
_NEWTON_STEPS = 3


class SamplingFailureError(RuntimeError):
    """Root polish failed to reach the residual tolerance at some node."""


class BranchPointError(ValueError):
    """Derivative requested where the cover degenerates (dP/dw ~ 0)."""


@dataclass(frozen=True)
class BranchedCoverSpec:
    """Coefficients c_k(z) as complex monomial coefficient tuples (ascending).

    The polynomial is monic of degree Q in w; the discriminant must be
    nonzero on a dense subset of any sampled domain, which is checked
    numerically at the sample nodes.
    """

    Q: int
    coeffs: tuple   # Q tuples of complex numbers; coeffs[k] are the z-monomials of c_k
    name: str = ""

    def __post_init__(self):
        if self.Q < 1:
            raise ValueError("cover degree Q must be positive")
        if len(self.coeffs) != self.Q:
            raise ValueError(f"need {self.Q} coefficient polynomials, got {len(self.coeffs)}")
        object.__setattr__(self, "coeffs",
                           tuple(tuple(complex(c) for c in ck) for ck in self.coeffs))

    def coeff_values(self, z: np.ndarray) -> np.ndarray:
        """c_k(z) for k = 0..Q-1, shape z.shape + (Q,)."""
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape + (self.Q,), dtype=complex)
        for k, ck in enumerate(self.coeffs):
            acc = np.zeros_like(z)
            for mono in reversed(ck):
                acc = acc * z + mono
            out[..., k] = acc
        return out

    def coeff_derivative_values(self, z: np.ndarray) -> np.ndarray:
        """c_k'(z), same layout as coeff_values."""
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape + (self.Q,), dtype=complex)
        for k, ck in enumerate(self.coeffs):
            acc = np.zeros_like(z)
            for j in range(len(ck) - 1, 0, -1):
                acc = acc * z + j * ck[j]
            out[..., k] = acc
        return out

    def poly_eval(self, z: np.ndarray, w: np.ndarray) -> np.ndarray:
        """P(z, w); w may carry one extra trailing axis of fiber points."""
        z = np.asarray(z, dtype=complex)
        w = np.asarray(w, dtype=complex)
        c = self.coeff_values(z)
        if w.ndim == z.ndim + 1:
            c = c.reshape(z.shape + (1, self.Q))
        acc = np.ones_like(w)
        for k in range(self.Q - 1, -1, -1):
            acc = acc * w + c[..., k]
        return acc

    def roots_at(self, z: np.ndarray) -> np.ndarray:
        """All Q fiber points over each z: companion-matrix eigenvalues
        refined by Newton polish to |P| < 1e-12."""
        z = np.asarray(z, dtype=complex)
        c = self.coeff_values(z)
        Q = self.Q
        if Q == 1:
            return (-c[..., 0])[..., None]
        comp = np.zeros(z.shape + (Q, Q), dtype=complex)
        comp[..., np.arange(1, Q), np.arange(Q - 1)] = 1.0
        comp[..., :, Q - 1] = -c
        w = np.linalg.eigvals(comp)
        for _ in range(_NEWTON_STEPS):
            p = np.ones_like(w)
            dp = np.zeros_like(w)
            for k in range(Q - 1, -1, -1):
                dp = dp * w + p
                p = p * w + c[..., k, None]
            step = np.where(np.abs(dp) > 1e-30, p / np.where(dp == 0, 1, dp), 0.0)
            # damp steps near multiple roots; eigenvalues are already close
            big = np.abs(step) > 0.5
            w = w - np.where(big, 0, step)
        return w

    def to_json(self) -> dict:
        return {"Q": self.Q,
                "coeffs": [[[c.real, c.imag] for c in ck] for ck in self.coeffs],
                "name": self.name}

    @classmethod
    def from_json(cls, d: dict) -> "BranchedCoverSpec":
        coeffs = tuple(tuple(complex(re, im) for re, im in ck) for ck in d["coeffs"])
        return cls(d["Q"], coeffs, d.get("name", ""))

    @classmethod
    def from_string(cls, text: str) -> "BranchedCoverSpec":
        """Parse the CLI shorthand 'power:Q' or inline JSON."""
        if text.startswith("power:"):
            return power_cover(int(text.split(":", 1)[1]))
        return cls.from_json(json.loads(text))


def power_cover(Q: int) -> BranchedCoverSpec:
    """The model cover w^Q = z: c_0(z) = -z, all other coefficients zero."""
    coeffs = [(0.0,)] * Q
    coeffs[0] = (0.0, -1.0)
    return BranchedCoverSpec(Q, tuple(coeffs), name=f"power:{Q}")


def two_sqrt_cover(a: float) -> BranchedCoverSpec:
    """(w^2 - (z - a)) (w^2 - (z + a)): two independent square-root
    branch points at z = +-a."""
    a = float(a)
    return BranchedCoverSpec(
        4,
        (
            (-a * a, 0.0, 1.0),   # c_0 = z^2 - a^2
            (0.0,),               # c_1 = 0
            (0.0, -2.0),          # c_2 = -2 z
            (0.0,),               # c_3 = 0
        ),
        name=f"two-sqrt:{a}",
    )


def sample_variety(spec: BranchedCoverSpec, domain: GridDomain) -> QGridField:
    """Sample the fiber over every grid node into a QGridField (n = 2).

    Requires a planar base; raises SamplingFailureError if any node's
    polished roots miss the 1e-12 residual, and rejects grids whose nodes
    hit the discriminant (perturb the grid offsets in that case).
    """
    if domain.m != 2:
        raise ValueError("sample_variety needs a planar domain; use product_extension for m > 2")
    X, Y = domain.node_grids()
    z = X + 1j * Y
    w = spec.roots_at(z)
    res = np.abs(spec.poly_eval(z, w))
    mask = domain.mask()
    bad = mask[..., None] & (res > _ROOT_RESIDUAL_TOL)
    if bad.any():
        i = tuple(np.argwhere(bad)[0][:2])
        raise SamplingFailureError(
            f"root residual {res[bad].max():.3e} at node {i}, z = {z[i]:.6g}")
    if spec.Q > 1:
        sep = np.full(z.shape, np.inf)
        for i in range(spec.Q):
            for j in range(i + 1, spec.Q):
                sep = np.minimum(sep, np.abs(w[..., i] - w[..., j]))
        if (sep[mask] < 1e-9).any():
            raise SamplingFailureError(
                "a sample node sits on the discriminant; perturb the grid origin")
    values = np.stack([w.real, w.imag], axis=-1)
    return QGridField.from_values(domain, values)


def branch_derivative(spec: BranchedCoverSpec, z: complex, w: complex) -> complex:
    """dw/dz of the local branch through (z, w) by implicit differentiation.

    The real Jacobian of the branch, as a map R^2 -> R^2, has Frobenius
    norm sqrt(2) |dw/dz| (holomorphic maps are conformal).
    """
    z = complex(z)
    w = complex(w)
    c = spec.coeff_values(np.asarray(z))
    dc = spec.coeff_derivative_values(np.asarray(z))
    dPdw = spec.Q * w ** (spec.Q - 1) + sum(
        k * c[k] * w ** (k - 1) for k in range(1, spec.Q))
    dPdz = sum(dc[k] * w ** k for k in range(spec.Q))
    if abs(dPdw) <= 1e-10:
        raise BranchPointError(f"dP/dw = {dPdw:.3e} at z={z}, w={w}: branch point")
    return -dPdz / dPdw


def exact_vq_energy(Q: int, r: float) -> float:
    """Closed-form Dirichlet energy of the power cover over B_r: 2 pi r^(2/Q).

    The density is (2/Q) |z|^(2/Q - 2), whose radial integral telescopes to
    this value; at r = 1 the energy is Q-independent.
    """
    if Q < 1:
        raise ValueError("Q must be >= 1")
    if r <= 0:
        raise ValueError("radius must be positive")
    return float(2 * np.pi * r ** (2.0 / Q))


def product_extension(g: QGridField, m: int, transverse_lo=0.0, transverse_hi=1.0,
                      transverse_resolution: int = 8) -> QGridField:
    """Extend a planar field constant along m - 2 new axes.

    The target is a box (or disk-cylinder) whose first two axes carry g's
    domain; the discrete energy over cross-section x transverse box equals
    the transverse measure times the planar energy exactly.
    """
    if m < 3:
        raise ValueError("product extension needs m >= 3")
    gd = g.domain
    if gd.m != 2:
        raise ValueError("base field must be planar")
    extra = m - 2
    tlo = tuple(np.broadcast_to(transverse_lo, (extra,)).astype(float))
    thi = tuple(np.broadcast_to(transverse_hi, (extra,)).astype(float))
    tres = tuple(np.broadcast_to(transverse_resolution, (extra,)).astype(int))
    if gd.kind == "disk":
        dom = GridDomain.cylinder(gd.center, gd.radius, tlo, thi,
                                  gd.resolution[0], tres)
        dom = GridDomain("cylinder", dom.lo, dom.hi, dom.resolution,
                         center=dom.center, radius=dom.radius,
                         offsets=gd.offsets + dom.offsets[2:])
    elif gd.kind == "box":
        dom = GridDomain.box(gd.lo + tlo, gd.hi + thi, gd.resolution + tres)
        dom = GridDomain("box", dom.lo, dom.hi, dom.resolution,
                         offsets=gd.offsets + dom.offsets[2:])
    else:
        raise ValueError(f"cannot extend domain kind {gd.kind!r}")
    tile_shape = g.samples.shape[:2] + (1,) * extra + g.samples.shape[2:]
    samples = np.broadcast_to(g.samples.reshape(tile_shape),
                              dom.shape + (g.q, g.n)).copy()
    return QGridField.from_values(dom, np.nan_to_num(samples, nan=0.0))
