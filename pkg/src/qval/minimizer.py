"""Planar Dirichlet minimization with prescribed monodromy.

Boundary data live on a circle as Q labeled traces that glue into each
other under the monodromy permutation at the parameter wrap. With the
sheet combinatorics fixed (branch locations, one straight cut per branch
point, gluing permutations), the discrete Dirichlet energy is a sparse
SPD quadratic form on the glued sheet complex, and the minimizer is its
harmonic extension. A singular-subtraction refinement removes the
O(h^(2/Q)) pollution of the five-point stencil at each branch point:
the leading fractional-power modes are fitted on a ring, subtracted from
the boundary data, re-solved, and added back in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .qfield import GridDomain, QGridField
from .varieties import BranchedCoverSpec

_SOLVER_RESIDUAL_TOL = 1e-10


class GeometryError(ValueError):
    """Branch point (or near-degenerate fiber) on the boundary circle."""


class TopologyError(ValueError):
    """Local cycles do not compose to the boundary monodromy."""


class NumericsError(RuntimeError):
    """Linear solve failed to reach the residual contract."""


def _perm_cycles(perm):
    perm = list(perm)
    seen, out = set(), []
    for s in range(len(perm)):
        if s in seen:
            continue
        cyc = [s]
        seen.add(s)
        t = perm[s]
        while t != s:
            cyc.append(t)
            seen.add(t)
            t = perm[t]
        out.append(cyc)
    return out


def _match_fibers(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Min-cost pairing of two small complex fibers (Q,) -> index map."""
    from scipy.optimize import linear_sum_assignment
    cost = np.abs(u[:, None] - v[None, :]) ** 2
    rows, cols = linear_sum_assignment(cost)
    out = np.empty(len(u), dtype=np.int64)
    out[rows] = cols
    return out


@dataclass
class MonodromyBoundary:
    """Q labeled boundary traces on a circle with a gluing permutation.

    values[j, s] is the trace of sheet s at angle thetas[j]; labels are
    continuous in the angle, and one counterclockwise loop carries sheet s
    into sheet monodromy[s]: values[M] would equal values[0][monodromy].
    """

    center: tuple
    radius: float
    monodromy: np.ndarray       # (Q,)
    values: np.ndarray          # (M, Q, n)

    def __post_init__(self):
        self.monodromy = np.asarray(self.monodromy, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError("trace values must have shape (M, Q, n)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trace values must be finite")

    @property
    def q(self) -> int:
        return self.values.shape[1]

    @property
    def n(self) -> int:
        return self.values.shape[2]

    @property
    def samples(self) -> int:
        return self.values.shape[0]

    def eval(self, theta) -> np.ndarray:
        """Linear interpolation in angle, gluing by the monodromy at the
        wrap. theta may be an array; returns (..., Q, n)."""
        t = np.mod(np.asarray(theta, dtype=float), 2 * np.pi)
        M = self.samples
        pos = t / (2 * np.pi) * M
        j0 = np.floor(pos).astype(int) % M
        frac = (pos - np.floor(pos))[..., None, None]
        j1 = (j0 + 1) % M
        v0 = self.values[j0]
        v1 = self.values[j1]
        wrapped = j1 == 0
        if np.any(wrapped):
            v1 = np.where(wrapped[..., None, None], self.values[0][self.monodromy], v1)
        return v0 * (1 - frac) + v1 * frac

    def to_json(self) -> dict:
        return {"circle": {"center": [float(c) for c in self.center],
                           "radius": float(self.radius)},
                "monodromy": [int(s) for s in self.monodromy],
                "trace": self.values.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "MonodromyBoundary":
        return cls(tuple(d["circle"]["center"]), d["circle"]["radius"],
                   np.asarray(d["monodromy"]), np.asarray(d["trace"]))


def boundary_from_cover(spec: BranchedCoverSpec, center=(0.0, 0.0), radius: float = 1.0,
                        samples: int = 2048) -> MonodromyBoundary:
    """Continue the fiber of a cover around the circle.

    Roots at consecutive angles are glued by min-cost matching; the
    permutation accumulated after one loop is the monodromy. A fiber with
    nearly colliding points flags a branch point on the circle.
    """
    th = 2 * np.pi * np.arange(samples) / samples
    z = center[0] + radius * np.cos(th) + 1j * (center[1] + radius * np.sin(th))
    roots = spec.roots_at(z)             # (M, Q)
    Q = spec.Q
    if Q > 1:
        sep = np.min([np.abs(roots[:, i] - roots[:, j])
                      for i in range(Q) for j in range(i + 1, Q)], axis=0)
        if sep.min() < 1e-8:
            k = int(np.argmin(sep))
            raise GeometryError(
                f"fiber degenerates at angle {th[k]:.4f} (separation {sep.min():.2e}): "
                "branch point on the circle; change the radius")
    values = np.empty((samples, Q), dtype=complex)
    values[0] = roots[0]
    for j in range(1, samples):
        mk = _match_fibers(values[j - 1], roots[j])
        values[j] = roots[j][mk]
    monodromy = _match_fibers(values[-1], roots[0])
    out = np.stack([values.real, values.imag], axis=-1)
    return MonodromyBoundary(tuple(map(float, center)), float(radius), monodromy, out)


def continue_fiber(spec: BranchedCoverSpec, zs: np.ndarray) -> np.ndarray:
    """Continuation matching along a waypoint path: component s of the
    fiber over zs[0] ends at component perm[s] of the fiber over zs[-1]."""
    fibers = spec.roots_at(np.asarray(zs, dtype=complex))
    cur = np.arange(spec.Q)
    prev = fibers[0]
    for k in range(1, len(fibers)):
        mk = _match_fibers(prev, fibers[k])
        cur = mk[cur]
        prev = fibers[k]
    return cur


def local_cycles_from_cover(spec: BranchedCoverSpec, boundary: MonodromyBoundary,
                            branch_points: Sequence, steps: int = 256) -> list:
    """Local gluing permutation per branch point, in the trace's labels.

    Each permutation is the fiber continuation around a small loop
    encircling only that branch point, conjugated back to the boundary
    anchor along a path through the cut complement (inward, around the
    branch points, never across a cut ray). Returns [(point, perm), ...]
    suitable for solve_planar.
    """
    center = np.asarray(boundary.center, dtype=float)
    R = boundary.radius
    pts = [np.asarray(p, dtype=float) for p in branch_points]
    angles = sorted(np.mod(np.arctan2(*(p - center)[::-1]), 2 * np.pi)
                    for p in pts if np.linalg.norm(p - center) > 1e-12)
    first = min([a for a in angles if a > 1e-9], default=2 * np.pi)
    theta_a = first / 2.0
    anchor = center[0] + 1j * center[1] + R * np.exp(1j * theta_a)
    # anchor labels: trace labels at theta_a (the anchor wedge is identity)
    tr = boundary.eval(theta_a)
    anchor_fiber = spec.roots_at(np.asarray(anchor))
    trace_pts = tr[:, 0] + 1j * tr[:, 1]
    lab = _match_fibers(trace_pts, anchor_fiber)   # trace sheet s -> component
    c = center[0] + 1j * center[1]
    radii = [np.linalg.norm(p - center) for p in pts]
    if min(radii) < 1e-9:
        raise GeometryError("local cycles by continuation need branch points "
                            "away from the disk center (the single-branch case "
                            "takes the boundary monodromy directly)")
    r0 = min(radii) / 2.0
    out = []
    for p in pts:
        b = p[0] + 1j * p[1]
        others = [q for q in pts if not np.array_equal(q, p)]
        clearance = min([np.linalg.norm(q - p) for q in others] + [R - abs(b - c)])
        rho = min(clearance / 3.0, abs(b - c) / 3.0)
        phi_b = np.angle(b - c)
        base = b - rho * np.exp(1j * phi_b)
        # cut-free lane: inward at the anchor angle, around at small radius
        # (all cuts run outward from their branch points), out to the base
        leg1 = c + np.exp(1j * theta_a) * np.linspace(R, r0, steps)
        leg2 = c + r0 * np.exp(1j * (theta_a + np.mod(phi_b - theta_a, 2 * np.pi)
                                     * np.linspace(0, 1, steps)))
        leg3 = np.linspace(c + r0 * np.exp(1j * phi_b), base, steps)
        approach = np.concatenate([leg1, leg2[1:], leg3[1:]])
        C = continue_fiber(spec, approach)
        loop_pts = b + (base - b) * np.exp(1j * 2 * np.pi * np.linspace(0, 1, 2 * steps))
        sigma_loop = continue_fiber(spec, loop_pts)
        # conjugate back to trace labels: sheet s sits at component C[lab[s]]
        comp = C[lab]
        inv_comp = np.empty_like(comp)
        inv_comp[comp] = np.arange(spec.Q)
        sigma = inv_comp[sigma_loop[comp]]
        out.append((tuple(p), sigma))
    return out


def _segment_crossings(p1x, p1y, p2x, p2y, a, b):
    """Which of the segments (p1, p2) cross the segment (a, b); vectorized.

    Also returns the orientation: True where p1 lies on the clockwise side
    of the cut direction (crossing counterclockwise around the cut base)."""
    dx, dy = b[0] - a[0], b[1] - a[1]
    s1 = dx * (p1y - a[1]) - dy * (p1x - a[0])
    s2 = dx * (p2y - a[1]) - dy * (p2x - a[0])
    ex, ey = p2x - p1x, p2y - p1y
    t1 = ex * (a[1] - p1y) - ey * (a[0] - p1x)
    t2 = ex * (b[1] - p1y) - ey * (b[0] - p1x)
    cross = (s1 * s2 < 0) & (t1 * t2 < 0)
    ccw = s1 < 0
    on_line = ((s1 == 0) | (s2 == 0)) & (t1 * t2 <= 0)
    if np.any(on_line):
        raise GeometryError("a grid node lies exactly on a cut; perturb the grid offsets")
    return cross, ccw


@dataclass
class SheetComplexSystem:
    """Glued five-point Laplacian on the cut disk with Dirichlet ring data.

    Unknowns are (interior node, sheet) pairs; stencil edges crossing a
    cut are rewired by that cut's gluing permutation, making the system
    matrix a symmetric positive definite M-matrix after boundary
    elimination.
    """

    domain: GridDomain
    q: int
    cuts: list                       # dicts: point, perm, end, angle
    interior: np.ndarray
    ring: np.ndarray
    index: np.ndarray                # unknown id per node, -1 elsewhere
    matrix: sp.csc_matrix
    edge_perm: dict                  # axis -> (edges,) permutation arrays
    edge_cross: dict
    last_solution: Optional[np.ndarray] = None   # solver-labeled (shape, Q, n)
    _lu: object = None

    def factor(self):
        if self._lu is None:
            self._lu = spla.splu(self.matrix)
        return self._lu

    def boundary_rows(self):
        """(row ids, ring node multi-indices, glued sheets) of Dirichlet edges."""
        return self._brows

    def solve(self, ring_values: np.ndarray) -> np.ndarray:
        """Harmonic extension of per-ring-node (Q, n) Dirichlet values.

        Returns the full-grid (shape, Q, n) array with NaN off the disk;
        enforces the 1e-10 relative residual contract.
        """
        n = ring_values.shape[-1]
        nun = self.matrix.shape[0]
        rhs = np.zeros((nun, n))
        rows, ridx, sheets = self._brows
        np.add.at(rhs, rows, ring_values[ridx, sheets])
        lu = self.factor()
        sol = lu.solve(rhs)
        denom = max(float(np.linalg.norm(rhs)), 1e-300)
        if np.linalg.norm(self.matrix @ sol - rhs) / denom > _SOLVER_RESIDUAL_TOL:
            cols = [spla.cg(self.matrix, rhs[:, c], x0=sol[:, c], atol=1e-14 * denom)[0]
                    for c in range(n)]
            sol = np.stack(cols, axis=-1)
            if np.linalg.norm(self.matrix @ sol - rhs) / denom > _SOLVER_RESIDUAL_TOL:
                raise NumericsError("linear solver missed the 1e-10 residual contract")
        Q = self.q
        shape = self.domain.shape
        out = np.full(shape + (Q, n), np.nan)
        ii = np.argwhere(self.interior)
        out[ii[:, 0], ii[:, 1]] = sol.reshape(len(ii), Q, n)
        rr = np.argwhere(self.ring)
        out[rr[:, 0], rr[:, 1]] = ring_values
        return out

    def energy(self, values: np.ndarray) -> float:
        """The glued quadratic form: sum over stencil edges of the squared
        matched difference (the functional the solver minimizes)."""
        v = np.nan_to_num(values, nan=0.0)
        ok_node = self.interior | self.ring
        total = 0.0
        for axis in (0, 1):
            sl_lo = (slice(0, -1), slice(None)) if axis == 0 else (slice(None), slice(0, -1))
            sl_hi = (slice(1, None), slice(None)) if axis == 0 else (slice(None), slice(1, None))
            ok = ok_node[sl_lo] & ok_node[sl_hi]
            perm = self.edge_perm[axis]
            glued = np.take_along_axis(v[sl_hi], perm[..., None], axis=-2)
            diff = ((glued - v[sl_lo]) ** 2).sum((-2, -1))
            total += float(diff[ok].sum())
        return total

    def laplacian_residual(self, values: np.ndarray) -> float:
        """Max glued-stencil residual over interior nodes, value-scaled."""
        v = np.nan_to_num(values, nan=0.0)
        Q = self.q
        shape = self.domain.shape
        acc = 4.0 * v.copy()
        for axis in (0, 1):
            perm = self.edge_perm[axis]
            sl_lo = (slice(0, -1), slice(None)) if axis == 0 else (slice(None), slice(0, -1))
            sl_hi = (slice(1, None), slice(None)) if axis == 0 else (slice(None), slice(1, None))
            fwd = np.take_along_axis(v[sl_hi], perm[..., None], axis=-2)
            bwd = np.take_along_axis(v[sl_lo], _invert(perm)[..., None], axis=-2)
            acc[sl_lo] -= fwd
            acc[sl_hi] -= bwd
        mag = np.abs(acc).max((-2, -1))
        scale = max(float(np.nanmax(np.abs(v))), 1e-300)
        return float(mag[self.interior].max() / scale)


def _invert(p: np.ndarray) -> np.ndarray:
    inv = np.empty_like(p)
    np.put_along_axis(inv, p, np.broadcast_to(np.arange(p.shape[-1]), p.shape).copy(), axis=-1)
    return inv


def _build_system(center, radius, resolution, Q, branch_data) -> SheetComplexSystem:
    dom = GridDomain.disk(center, radius, resolution)
    X, Y = dom.node_grids()
    inside = dom.mask()
    has_out = np.ones(dom.shape, dtype=bool)
    has_out[1:-1, 1:-1] = ~(inside[:-2, 1:-1] & inside[2:, 1:-1] &
                            inside[1:-1, :-2] & inside[1:-1, 2:])
    ring = inside & has_out
    interior = inside & ~has_out

    # cuts: straight ray from each branch point away from the disk center
    cuts = []
    for (pt, perm) in branch_data:
        pt = np.asarray(pt, dtype=float)
        d = pt - np.asarray(center, dtype=float)
        if np.linalg.norm(d) < 1e-12:
            d = np.array([1.0, 0.0])
        d = d / np.linalg.norm(d)
        end = np.asarray(center) + radius * 1.001 * d
        angle = float(np.mod(np.arctan2(d[1], d[0]), 2 * np.pi))
        cuts.append({"point": pt, "perm": np.asarray(perm, dtype=np.int64),
                     "end": end, "angle": angle})
    cuts.sort(key=lambda c: c["angle"])

    ident = np.arange(Q)
    edge_perm, edge_cross = {}, {}
    for axis in (0, 1):
        if axis == 0:
            p1x, p1y = X[:-1, :], Y[:-1, :]
            p2x, p2y = X[1:, :], Y[1:, :]
        else:
            p1x, p1y = X[:, :-1], Y[:, :-1]
            p2x, p2y = X[:, 1:], Y[:, 1:]
        perm = np.broadcast_to(ident, p1x.shape + (Q,)).copy()
        crossed = np.zeros(p1x.shape, dtype=bool)
        for cut in cuts:
            cross, ccw = _segment_crossings(p1x, p1y, p2x, p2y, cut["point"], cut["end"])
            if not cross.any():
                continue
            sig, inv = cut["perm"], _invert(cut["perm"])
            sel_c = cross & ccw
            sel_w = cross & ~ccw
            # going lo -> hi counterclockwise around the branch point: sigma
            perm[sel_c] = sig[perm[sel_c]]
            perm[sel_w] = inv[perm[sel_w]]
            crossed |= cross
        edge_perm[axis] = perm
        edge_cross[axis] = crossed

    index = -np.ones(dom.shape, dtype=np.int64)
    ii = np.argwhere(interior)
    index[ii[:, 0], ii[:, 1]] = np.arange(len(ii))
    nun = len(ii) * Q

    rows_list, cols_list = [], []
    brow_rows, brow_ring, brow_sheet = [], [], []
    ring_index = -np.ones(dom.shape, dtype=np.int64)
    rr = np.argwhere(ring)
    ring_index[rr[:, 0], rr[:, 1]] = np.arange(len(rr))

    for axis in (0, 1):
        perm = edge_perm[axis]
        if axis == 0:
            lo_idx = index[:-1, :]; hi_idx = index[1:, :]
            lo_ring = ring_index[:-1, :]; hi_ring = ring_index[1:, :]
        else:
            lo_idx = index[:, :-1]; hi_idx = index[:, 1:]
            lo_ring = ring_index[:, :-1]; hi_ring = ring_index[:, 1:]
        inv_perm = _invert(perm)
        both = (lo_idx >= 0) & (hi_idx >= 0)
        if both.any():
            li, hi_, pm = lo_idx[both], hi_idx[both], perm[both]
            r = (li[:, None] * Q + ident).ravel()
            c = (hi_[:, None] * Q + pm).ravel()
            rows_list.append(np.concatenate([r, c]))
            cols_list.append(np.concatenate([c, r]))
        lo2ring = (lo_idx >= 0) & (hi_ring >= 0)
        if lo2ring.any():
            li, rg, pm = lo_idx[lo2ring], hi_ring[lo2ring], perm[lo2ring]
            brow_rows.append((li[:, None] * Q + ident).ravel())
            brow_ring.append(np.repeat(rg, Q))
            brow_sheet.append(pm.ravel())
        hi2ring = (hi_idx >= 0) & (lo_ring >= 0)
        if hi2ring.any():
            hi_, rg, pm = hi_idx[hi2ring], lo_ring[hi2ring], inv_perm[hi2ring]
            brow_rows.append((hi_[:, None] * Q + ident).ravel())
            brow_ring.append(np.repeat(rg, Q))
            brow_sheet.append(pm.ravel())

    rows = np.concatenate(rows_list) if rows_list else np.empty(0, np.int64)
    cols = np.concatenate(cols_list) if cols_list else np.empty(0, np.int64)
    vals = np.full(rows.shape, -1.0)
    diag = np.arange(nun)
    rows = np.concatenate([rows, diag])
    cols = np.concatenate([cols, diag])
    vals = np.concatenate([vals, np.full(nun, 4.0)])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(nun, nun)).tocsc()
    sys = SheetComplexSystem(dom, Q, cuts, interior, ring, index, A, edge_perm, edge_cross)
    sys._brows = (np.concatenate(brow_rows), np.concatenate(brow_ring),
                  np.concatenate(brow_sheet))
    sys._ring_nodes = rr
    return sys


def _validate_topology(cuts, monodromy: np.ndarray) -> None:
    total = np.arange(len(monodromy))
    for cut in cuts:   # already sorted by boundary angle
        total = cut["perm"][total]
    if not np.array_equal(total, monodromy):
        raise TopologyError(
            f"local cycles compose to {total.tolist()}, boundary monodromy "
            f"is {monodromy.tolist()}")


def _wedge_maps(cuts, theta: np.ndarray, Q: int) -> np.ndarray:
    """Trace-label map per boundary angle: sheet s reads trace index map[s].

    Anchored to the identity just above angle zero; crossing each cut
    counterclockwise composes with the inverse gluing permutation."""
    maps = np.broadcast_to(np.arange(Q), theta.shape + (Q,)).copy()
    current = np.arange(Q)
    angles = sorted([c["angle"] for c in cuts if c["angle"] > 0])
    lookup = {c["angle"]: c for c in cuts}
    boundaries = []
    for ang in angles:
        inv = _invert(lookup[ang]["perm"])
        current = current[inv]
        boundaries.append((ang, current.copy()))
    for ang, mp in boundaries:
        sel = theta > ang
        maps[sel] = mp
    return maps


@dataclass
class SingularMode:
    """One fractional-power harmonic mode r^(k/K) tied to a holonomy cycle."""

    point: np.ndarray
    dir_angle: float
    cycle: list
    k: int
    K: int

    def basis(self, x, y, Q):
        """cos/sin mode values per sheet, shape x.shape + (Q, 2)."""
        th = np.mod(np.arctan2(y - self.point[1], x - self.point[0]) - self.dir_angle,
                    2 * np.pi)
        r = np.hypot(x - self.point[0], y - self.point[1])
        out = np.zeros(np.shape(x) + (Q, 2))
        for j, s in enumerate(self.cycle):
            big = (th + 2 * np.pi * j) * (self.k / self.K)
            amp = r ** (self.k / self.K)
            out[..., s, 0] = amp * np.cos(big)
            out[..., s, 1] = amp * np.sin(big)
        return out


def _refine_singular(sys: SheetComplexSystem, U: np.ndarray, ring_values: np.ndarray,
                     iters: int = 2) -> np.ndarray:
    """Subtract fitted fractional modes, re-solve, and add them back.

    Needs pairwise disjoint cycle supports across branch points (true for
    independent branch points); ill-fitting modes fall back to the plain
    solution.
    """
    Q = sys.q
    n = U.shape[-1]
    dom = sys.domain
    h = dom.h[0]
    X, Y = dom.node_grids()
    modes = []
    supports = []
    for cut in sys.cuts:
        for cyc in _perm_cycles(cut["perm"]):
            K = len(cyc)
            if K == 1:
                continue
            if any(set(cyc) & s for s in supports):
                return U      # overlapping winding: refinement not applicable
            supports.append(set(cyc))
            for k in range(1, 2 * K):
                if k % K == 0:
                    continue
                modes.append(SingularMode(cut["point"], cut["angle"], cyc, k, K))
    if not modes:
        return U
    # fit-only smooth companions stabilize the least squares
    fit_extra = []
    for cut in sys.cuts:
        for cyc in _perm_cycles(cut["perm"]):
            if len(cyc) > 1:
                fit_extra.append(SingularMode(cut["point"], cut["angle"], cyc,
                                              len(cyc), len(cyc)))
                fit_extra.append(SingularMode(cut["point"], cut["angle"], cyc,
                                              2 * len(cyc), len(cyc)))
    rr = sys._ring_nodes
    ring_xy = (X[rr[:, 0], rr[:, 1]], Y[rr[:, 0], rr[:, 1]])
    out = U
    for _ in range(iters):
        coeffs = []
        subtract_ring = np.zeros_like(ring_values)
        subtract_all = np.zeros_like(out)
        for cut in sys.cuts:
            cycs = [m for m in modes if np.array_equal(m.point, cut["point"])]
            if not cycs:
                continue
            rad = np.hypot(X - cut["point"][0], Y - cut["point"][1])
            ringsel = (rad >= 6 * h) & (rad <= 20 * h) & sys.interior
            pts = np.argwhere(ringsel)
            if len(pts) < 8:
                continue
            xs, ys = X[ringsel], Y[ringsel]
            local = cycs + [m for m in fit_extra if np.array_equal(m.point, cut["point"])]
            design = []
            for mde in local:
                bas = mde.basis(xs, ys, Q)        # (pts, Q, 2)
                design.append(bas[..., 0])
                design.append(bas[..., 1])
            # constant per cycle sheet group
            const = np.ones((len(xs), Q))
            design.append(const)
            A = np.stack(design, axis=-1).reshape(len(xs) * Q, -1)
            rhs = out[ringsel].reshape(len(xs) * Q, n)
            sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
            for mi, mde in enumerate(cycs):
                c_cos = sol[2 * mi]
                c_sin = sol[2 * mi + 1]
                coeffs.append((mde, c_cos, c_sin))
                bas_r = mde.basis(ring_xy[0], ring_xy[1], Q)
                subtract_ring += bas_r[..., 0, None] * c_cos + bas_r[..., 1, None] * c_sin
                bas_a = mde.basis(X, Y, Q)
                subtract_all += bas_a[..., 0, None] * c_cos + bas_a[..., 1, None] * c_sin
        if not coeffs:
            return out
        V = sys.solve(ring_values - subtract_ring)
        out = V + subtract_all
    return out


def solve_planar(boundary: MonodromyBoundary, branch_locations: Sequence,
                 resolution: int, refine_singular: bool = True,
                 ring_field: Optional[QGridField] = None,
                 return_system: bool = False):
    """Discrete Dir-minimizing Q-valued field for the given boundary data.

    branch_locations: sequence of points, or of (point, local_permutation)
    pairs; a single bare point inherits the full boundary monodromy. The
    ordered product of the local cycles must equal the boundary monodromy.

    The Dirichlet ring carries the circle trace projected by angle; when
    ring_field holds samples on the same grid (e.g. the variety being
    cross-validated), its exact ring-node values are used instead, labeled
    by matching them to the trace.
    """
    Q = boundary.q
    branch_data = []
    for item in branch_locations:
        if isinstance(item, (tuple, list)) and len(item) == 2 and np.ndim(item[0]) == 1:
            branch_data.append((np.asarray(item[0], float), np.asarray(item[1], np.int64)))
        else:
            branch_data.append((np.asarray(item, float), boundary.monodromy))
    sys = _build_system(boundary.center, boundary.radius, resolution, Q, branch_data)
    _validate_topology(sys.cuts, boundary.monodromy)
    X, Y = sys.domain.node_grids()
    rr = sys._ring_nodes
    theta = np.mod(np.arctan2(Y[rr[:, 0], rr[:, 1]] - boundary.center[1],
                              X[rr[:, 0], rr[:, 1]] - boundary.center[0]), 2 * np.pi)
    raw = boundary.eval(theta)                     # (R, Q, n) in trace labels
    wmaps = _wedge_maps(sys.cuts, theta, Q)        # sheet s -> trace index
    ring_values = np.take_along_axis(raw, wmaps[..., None], axis=-2)
    if ring_field is not None:
        if ring_field.domain != sys.domain:
            raise ValueError("ring_field must live on the solver's grid")
        from scipy.optimize import linear_sum_assignment
        samples = ring_field.samples[rr[:, 0], rr[:, 1]]
        for k in range(len(rr)):
            cost = ((ring_values[k][:, None, :] - samples[k][None, :, :]) ** 2).sum(-1)
            rows, cols = linear_sum_assignment(cost)
            ring_values[k] = samples[k][cols]
    U = sys.solve(ring_values)
    if refine_singular:
        U = _refine_singular(sys, U, ring_values)
    sys.last_solution = U
    field = QGridField.from_values(sys.domain, np.nan_to_num(U, nan=0.0))
    if return_system:
        return field, sys
    return field


def compare_fields(a: QGridField, b: QGridField, exclude_center=None,
                   exclude_radius: float = 0.0) -> dict:
    """Nodewise matching-metric error statistics and the energy gap.

    Errors may be normalized against b's local sheet separation; nodes
    within exclude_radius of exclude_center are dropped from the suprema
    (the branch-point neighborhood, where separation vanishes).
    """
    from .qfield import dirichlet_energy, sheet_align
    import itertools as _it

    if a.domain != b.domain or a.q != b.q or a.n != b.n:
        raise ValueError("fields live on different grids")
    Q = a.q
    mask = a.mask & b.mask
    cost = ((a.samples[..., :, None, :] - b.samples[..., None, :, :]) ** 2).sum(-1)
    perms = np.array(list(_it.permutations(range(Q))))
    idx = np.arange(Q)
    pc = np.stack([cost[..., idx, p].sum(-1) for p in perms], -1)
    gerr = np.sqrt(np.maximum(np.nan_to_num(pc, nan=np.inf).min(-1), 0.0))
    if Q > 1:
        sep = np.full(mask.shape, np.inf)
        for i in range(Q):
            for j in range(i + 1, Q):
                d = b.samples[..., i, :] - b.samples[..., j, :]
                sep = np.minimum(sep, np.sqrt((d ** 2).sum(-1)))
    else:
        sep = np.ones(mask.shape)
    sel = mask
    if exclude_center is not None and exclude_radius > 0:
        X = a.domain.node_grids()
        rad = np.hypot(X[0] - exclude_center[0], X[1] - exclude_center[1])
        sel = sel & (rad >= exclude_radius)
    rel = np.where(sel, gerr / sep, 0.0)
    dir_a = dirichlet_energy(a, sheet_align(a))
    dir_b = dirichlet_energy(b, sheet_align(b))
    return {
        "sup_error": float(np.max(np.where(sel, gerr, 0.0))),
        "mean_error": float(gerr[sel].mean()) if sel.any() else 0.0,
        "sup_rel_error": float(np.max(rel)),
        "mean_rel_error": float(rel[sel].mean()) if sel.any() else 0.0,
        "dir_first": dir_a,
        "dir_second": dir_b,
        "energy_gap": (dir_a - dir_b) / dir_b if dir_b else 0.0,
    }


def energy_gap_vs_variety(spec: BranchedCoverSpec, resolution: int,
                          branch_point=(0.0, 0.0), center=(0.0, 0.0),
                          radius: float = 1.0, refine_singular: bool = True) -> dict:
    """Solve with the cover's boundary data and compare against the
    sampled variety on the same grid: relative energy gap and nodewise
    matching-metric error statistics, suprema away from the branch point.

    The Dirichlet ring takes the cover's exact node values (labeled by the
    circle trace), so the two discretizations share their boundary data."""
    from .varieties import sample_variety
    from .qfield import GridDomain

    boundary = boundary_from_cover(spec, center, radius)
    dom = GridDomain.disk(center, radius, resolution)
    variety = sample_variety(spec, dom)
    solved = solve_planar(boundary, [branch_point], resolution,
                          refine_singular=refine_singular, ring_field=variety)
    stats = compare_fields(solved, variety, exclude_center=branch_point,
                           exclude_radius=0.1)
    stats["dir_solver"] = stats.pop("dir_first")
    stats["dir_variety"] = stats.pop("dir_second")
    return stats
