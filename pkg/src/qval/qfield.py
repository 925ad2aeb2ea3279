"""Grid-sampled Q-valued functions.

A field assigns a Q-point to every node of a regular node-centered grid
(each node owns a cell of volume prod(h), so counted cells tile the box
exactly). Sheet alignment glues the per-node multisets into locally
continuous sheets by minimum-cost matching along grid edges; plaquettes
with nontrivial matching holonomy are the branch cells. Energies are
central finite differences per aligned sheet, with a singularity-adapted
local quadrature replacing the excised branch cells.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field as dc_field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

_GRID_OFFSET_PRIMES = (3, 7, 11, 13, 17, 19, 23, 29)
_PERM_ENUM_MAX_Q = 6
_AMBIGUITY_REL_GAP = 1e-9
_ROOT_RING = (1.5, 4.5)      # branch-cell model fitted on nodes in this radius band (units of h)
_MODEL_SUBGRID = 24          # branch-point search resolution inside the cell
_BLOCK_SUBGRID = 48          # quadrature subgrid over the excised block


class DomainError(ValueError):
    """Region not contained in the field's domain."""


class UndefinedFitError(ValueError):
    """Log-log fit requested on degenerate (zero-energy) data."""


# ---------------------------------------------------------------------------
# domains and regions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridDomain:
    """Node-centered regular grid over a box, disk, or disk-cylinder.

    kind: 'box' | 'disk' | 'cylinder'. Disks and cylinders mask by the
    radius in the first two axes; the bounding box circumscribes the disk.
    Node k along axis a sits at lo[a] + (k + 1/2) h[a] + offset[a]; the
    default offsets h/3, h/7, ... keep branch points and discriminant
    zeros off the nodes.
    """

    kind: str
    lo: tuple
    hi: tuple
    resolution: tuple
    center: Optional[tuple] = None
    radius: Optional[float] = None
    offsets: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("box", "disk", "cylinder"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if len(self.lo) != len(self.hi) or len(self.lo) != len(self.resolution):
            raise ValueError("lo, hi, resolution must agree in length")
        if min(self.resolution) < 8:
            raise ValueError("resolution must be at least 8 per axis")
        if self.offsets is None:
            hs = self.h
            offs = tuple(hs[a] / _GRID_OFFSET_PRIMES[a % len(_GRID_OFFSET_PRIMES)]
                         for a in range(self.m))
            object.__setattr__(self, "offsets", offs)

    # -- constructors --
    @staticmethod
    def box(lo: Sequence[float], hi: Sequence[float], resolution, offsets=None) -> "GridDomain":
        lo, hi = tuple(map(float, lo)), tuple(map(float, hi))
        res = (resolution,) * len(lo) if np.isscalar(resolution) else tuple(resolution)
        return GridDomain("box", lo, hi, res, offsets=offsets)

    @staticmethod
    def disk(center: Sequence[float], radius: float, resolution: int, offsets=None) -> "GridDomain":
        cx, cy = map(float, center)
        r = float(radius)
        return GridDomain("disk", (cx - r, cy - r), (cx + r, cy + r),
                          (resolution, resolution), center=(cx, cy), radius=r,
                          offsets=offsets)

    @staticmethod
    def cylinder(center, radius, transverse_lo, transverse_hi,
                 resolution, transverse_resolution, offsets=None) -> "GridDomain":
        cx, cy = map(float, center)
        r = float(radius)
        tlo = tuple(map(float, np.atleast_1d(transverse_lo)))
        thi = tuple(map(float, np.atleast_1d(transverse_hi)))
        tres = ((transverse_resolution,) * len(tlo) if np.isscalar(transverse_resolution)
                else tuple(transverse_resolution))
        return GridDomain("cylinder", (cx - r, cy - r) + tlo, (cx + r, cy + r) + thi,
                          (resolution, resolution) + tres, center=(cx, cy), radius=r,
                          offsets=offsets)

    @property
    def m(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple:
        return tuple(self.resolution)

    @property
    def h(self) -> tuple:
        return tuple((self.hi[a] - self.lo[a]) / self.resolution[a] for a in range(self.m))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def axis_coords(self, a: int) -> np.ndarray:
        h = self.h[a]
        return self.lo[a] + (np.arange(self.resolution[a]) + 0.5) * h + self.offsets[a]

    def node_grids(self) -> list:
        return np.meshgrid(*[self.axis_coords(a) for a in range(self.m)], indexing="ij")

    def mask(self) -> np.ndarray:
        if self.kind == "box":
            return np.ones(self.shape, dtype=bool)
        X = self.node_grids()
        r2 = (X[0] - self.center[0]) ** 2 + (X[1] - self.center[1]) ** 2
        return r2 <= self.radius ** 2

    def to_json(self) -> dict:
        d = {"kind": self.kind, "lo": [float(v) for v in self.lo],
             "hi": [float(v) for v in self.hi],
             "resolution": [int(v) for v in self.resolution],
             "offsets": [float(v) for v in self.offsets]}
        if self.center is not None:
            d["center"] = [float(v) for v in self.center]
            d["radius"] = float(self.radius)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "GridDomain":
        return cls(d["kind"], tuple(d["lo"]), tuple(d["hi"]), tuple(d["resolution"]),
                   center=tuple(d["center"]) if "center" in d else None,
                   radius=d.get("radius"), offsets=tuple(d["offsets"]))


@dataclass(frozen=True)
class Region:
    """Node selector inside a domain: whole grid, ball, annulus, or tube.

    Balls use all m coordinates; tubes use the radius in the first two
    axes only (the natural shells around the singular line of a product
    extension). Measures are counted-cell measures.
    """

    kind: str
    center: tuple = ()
    r_inner: float = 0.0
    r_outer: float = np.inf

    @staticmethod
    def whole() -> "Region":
        return Region("whole")

    @staticmethod
    def ball(center, r) -> "Region":
        return Region("ball", tuple(map(float, center)), 0.0, float(r))

    @staticmethod
    def annulus(center, r_inner, r_outer) -> "Region":
        return Region("ball", tuple(map(float, center)), float(r_inner), float(r_outer))

    @staticmethod
    def tube(center2, r, r_inner=0.0) -> "Region":
        return Region("tube", tuple(map(float, center2)), float(r_inner), float(r))

    def node_mask(self, domain: GridDomain) -> np.ndarray:
        if self.kind == "whole":
            return np.ones(domain.shape, dtype=bool)
        X = domain.node_grids()
        if self.kind == "ball":
            if len(self.center) != domain.m:
                raise DomainError(f"ball center has {len(self.center)} coordinates "
                                  f"for an m={domain.m} domain")
            r2 = sum((X[a] - self.center[a]) ** 2 for a in range(domain.m))
        else:  # tube
            r2 = (X[0] - self.center[0]) ** 2 + (X[1] - self.center[1]) ** 2
        return (r2 <= self.r_outer ** 2) & (r2 > self.r_inner ** 2)

    def contains_point(self, p) -> bool:
        if self.kind == "whole":
            return True
        p = np.asarray(p, dtype=float)
        if self.kind == "tube":
            d = np.hypot(p[0] - self.center[0], p[1] - self.center[1])
        else:
            d = np.linalg.norm(p - np.asarray(self.center))
        return self.r_inner < d <= self.r_outer

    def check_inside(self, domain: GridDomain) -> None:
        if self.kind == "whole":
            return
        c = np.asarray(self.center)
        if self.kind == "ball" and domain.kind == "disk":
            dc = np.hypot(c[0] - domain.center[0], c[1] - domain.center[1])
            if dc + self.r_outer > domain.radius * (1 + 1e-12):
                raise DomainError(f"ball({self.center}, {self.r_outer}) leaves the disk")
            return
        naxes = 2 if self.kind == "tube" else domain.m
        for a in range(naxes):
            if c[a] - self.r_outer < domain.lo[a] - 1e-12 or c[a] + self.r_outer > domain.hi[a] + 1e-12:
                raise DomainError(f"region leaves the domain box along axis {a}")


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

def canonical_sort(samples: np.ndarray) -> np.ndarray:
    """Sort each node's Q rows lexicographically (vectorized over nodes)."""
    shp = samples.shape
    Q, n = shp[-2], shp[-1]
    flat = samples.reshape(-1, Q, n)
    nn = flat.shape[0]
    node_id = np.repeat(np.arange(nn), Q)
    rows = flat.reshape(-1, n)
    keys = [rows[:, c] for c in range(n - 1, -1, -1)] + [node_id]
    order = np.lexsort(keys)
    return rows[order].reshape(shp)


@dataclass
class QGridField:
    """Q-valued function sampled on a grid; NaN at masked-out nodes."""

    domain: GridDomain
    q: int
    n: int
    samples: np.ndarray   # shape + (Q, n), canonical row order per node

    def __post_init__(self):
        expect = self.domain.shape + (self.q, self.n)
        if self.samples.shape != expect:
            raise ValueError(f"samples shape {self.samples.shape}, expected {expect}")
        mask = self.domain.mask()
        vals = self.samples[mask]
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite sample inside the domain mask")

    @classmethod
    def from_values(cls, domain: GridDomain, values: np.ndarray) -> "QGridField":
        """Build from raw per-node (Q, n) values; rows are canonicalized."""
        values = np.asarray(values, dtype=float)
        q, n = values.shape[-2], values.shape[-1]
        samples = canonical_sort(values)
        samples = np.where(domain.mask()[..., None, None], samples, np.nan)
        return cls(domain, q, n, samples)

    @property
    def mask(self) -> np.ndarray:
        return self.domain.mask()

    def scaled(self, lam: float) -> "QGridField":
        return QGridField(self.domain, self.q, self.n, canonical_sort(self.samples * lam))

    # -- serialization: JSON header line + little-endian float64 body --
    def save(self, path) -> None:
        header = {"format": "qgf-1", "domain": self.domain.to_json(),
                  "q": self.q, "n": self.n}
        with open(path, "wb") as fh:
            fh.write((json.dumps(header) + "\n").encode("utf-8"))
            fh.write(self.samples.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "QGridField":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            body = fh.read()
        if header.get("format") != "qgf-1":
            raise ValueError(f"not a qgf file: {path}")
        domain = GridDomain.from_json(header["domain"])
        q, n = header["q"], header["n"]
        arr = np.frombuffer(body, dtype="<f8").astype(float)
        arr = arr.reshape(domain.shape + (q, n))
        return cls(domain, q, n, arr)


# ---------------------------------------------------------------------------
# sheet alignment
# ---------------------------------------------------------------------------

def _perm_table(Q: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(Q))), dtype=np.int64)


def _invert_perms(p: np.ndarray) -> np.ndarray:
    inv = np.empty_like(p)
    np.put_along_axis(inv, p, np.broadcast_to(np.arange(p.shape[-1]), p.shape).copy(), axis=-1)
    return inv


def _compose(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """(q after p)[s] = q[p[s]], elementwise over leading axes."""
    return np.take_along_axis(q, p, axis=-1)


def _edge_match(u: np.ndarray, v: np.ndarray, perms: np.ndarray):
    """Min-cost matchings between node arrays u, v of shape (..., Q, n).

    Returns (match, ambiguous): match[..., s] is the component of v paired
    with component s of u; ambiguous flags edges where a second essentially
    different matching lies within relative gap 1e-9.
    """
    Q = u.shape[-2]
    cost = ((u[..., :, None, :] - v[..., None, :, :]) ** 2).sum(-1)
    if Q <= _PERM_ENUM_MAX_Q:
        nper = perms.shape[0]
        idx = np.arange(Q)
        pcost = np.empty(cost.shape[:-2] + (nper,))
        for p in range(nper):
            pcost[..., p] = cost[..., idx, perms[p]].sum(-1)
        best = np.argmin(pcost, axis=-1)
        match = perms[best]
        if nper == 1:
            return match, np.zeros(best.shape, dtype=bool)
        srt = np.sort(pcost, axis=-1)
        c1 = srt[..., 0]
        scale = np.maximum((u ** 2).sum((-2, -1)), (v ** 2).sum((-2, -1)))
        scale = np.maximum(scale, 1.0)
        tie_atol = 1e-13 * scale
        distinct = np.where(srt > (c1 + tie_atol)[..., None], srt, np.inf)
        c2 = distinct.min(-1)
        ambiguous = np.isfinite(c2) & ((c2 - c1) <= _AMBIGUITY_REL_GAP * np.maximum(c2, tie_atol))
        return match, ambiguous
    # Hungarian fallback for large Q, edge by edge
    lead = cost.shape[:-2]
    match = np.empty(lead + (Q,), dtype=np.int64)
    ambiguous = np.zeros(lead, dtype=bool)
    for ix in np.ndindex(*lead):
        c = cost[ix]
        rows, cols = linear_sum_assignment(c)
        match[ix] = cols
        # 2-opt probe for a near-tie essentially different matching
        gap = np.inf
        for a in range(Q):
            for b in range(a + 1, Q):
                alt = c[a, cols[b]] + c[b, cols[a]] - c[a, cols[a]] - c[b, cols[b]]
                if alt > 1e-13 * max(c.max(), 1.0):
                    gap = min(gap, alt)
        scale = max(c.max(), 1.0)
        ambiguous[ix] = np.isfinite(gap) and gap <= _AMBIGUITY_REL_GAP * scale
    return match, ambiguous


@dataclass
class SheetChart:
    """Globally labeled sheets of a field plus its monodromy data.

    `aligned[node, s]` is the value of sheet s; `trans[a][edge, s]` is the
    residual permutation along axis-a edges (identity off the alignment
    cut); `branch_cells` are grid cells whose plaquette holonomy is
    nontrivial (or whose matching was ambiguous).
    """

    field: QGridField
    aligned: np.ndarray                 # shape + (Q, n)
    valid: np.ndarray                   # aligned-node mask
    ordering: np.ndarray                # shape + (Q,), sheet -> raw component
    trans: list                         # per axis residual perms, shape_a + (Q,)
    edge_ok: list                       # per axis bool, both endpoints aligned
    branch_cells: frozenset             # tuples, m-dim cell corner indices
    ambiguous_cells: frozenset
    holonomy: dict                      # (m=2) cell -> loop permutation tuple
    _grad: Optional[np.ndarray] = dc_field(default=None, repr=False)
    _grad_valid: Optional[np.ndarray] = dc_field(default=None, repr=False)

    @property
    def q(self) -> int:
        return self.field.q

    @property
    def n(self) -> int:
        return self.field.n

    def branch_corner_mask(self) -> np.ndarray:
        """Nodes that are corners of a branch cell (excised from stencils)."""
        mask = np.zeros(self.field.domain.shape, dtype=bool)
        for cell in self.branch_cells:
            sl = tuple(slice(c, c + 2) for c in cell)
            mask[sl] = True
        return mask

    def gradient(self):
        """Per-sheet derivatives, shape + (m, Q, n); NaN where no stencil.

        Central differences with residual-matched neighbor values; one-sided
        at mask edges. grad_valid excludes branch-cell corner nodes.
        """
        if self._grad is not None:
            return self._grad, self._grad_valid
        dom = self.field.domain
        m = dom.m
        shape = dom.shape
        Q, n = self.q, self.n
        grad = np.full(shape + (m, Q, n), np.nan)
        for a in range(m):
            h = dom.h[a]
            sl_lo = tuple(slice(None) if k != a else slice(0, -1) for k in range(m))
            sl_hi = tuple(slice(None) if k != a else slice(1, None) for k in range(m))
            perm = self.trans[a]
            ok = self.edge_ok[a]
            # value at u+e_a expressed in u's sheet labels
            fwd_val = np.take_along_axis(self.aligned[sl_hi], perm[..., None], axis=-2)
            # value at u-e_a expressed in u's sheet labels
            bwd_val = np.take_along_axis(self.aligned[sl_lo], _invert_perms(perm)[..., None], axis=-2)
            has_f = np.zeros(shape, dtype=bool)
            has_b = np.zeros(shape, dtype=bool)
            has_f[sl_lo] = ok
            has_b[sl_hi] = ok
            F = np.full(shape + (Q, n), np.nan)
            B = np.full(shape + (Q, n), np.nan)
            F[sl_lo] = np.where(ok[..., None, None], fwd_val, np.nan)
            B[sl_hi] = np.where(ok[..., None, None], bwd_val, np.nan)
            ga = np.full(shape + (Q, n), np.nan)
            both = has_f & has_b
            ga[both] = (F[both] - B[both]) / (2 * h)
            onlyf = has_f & ~has_b & self.valid
            ga[onlyf] = (F[onlyf] - self.aligned[onlyf]) / h
            onlyb = has_b & ~has_f & self.valid
            ga[onlyb] = (self.aligned[onlyb] - B[onlyb]) / h
            grad[(Ellipsis, a, slice(None), slice(None))] = ga
        gvalid = self.valid & np.isfinite(grad).all(axis=(-3, -2, -1)) & ~self.branch_corner_mask()
        self._grad = grad
        self._grad_valid = gvalid
        return grad, gvalid


def _comb_align(valid: np.ndarray, matches: list, edge_ok: list, Q: int):
    """Spanning-tree sheet orderings: comb through the seed plus wavefront
    cleanup for non-convex masks. Returns (ordering, aligned_mask)."""
    shape = valid.shape
    m = len(shape)
    ordering = np.zeros(shape + (Q,), dtype=np.int64)
    ordering[...] = np.arange(Q)
    aligned = np.zeros(shape, dtype=bool)
    if not valid.any():
        return ordering, aligned
    # seed: valid node nearest the grid center
    idxs = np.argwhere(valid)
    center = (np.asarray(shape) - 1) / 2.0
    seed = tuple(idxs[np.argmin(((idxs - center) ** 2).sum(1))])
    aligned[seed] = True

    def propagate(axis, forward):
        """One sweep along an axis, vectorized over the orthogonal slab."""
        changed = False
        nk = shape[axis]
        rng = range(1, nk) if forward else range(nk - 2, -1, -1)
        for k in rng:
            src = k - 1 if forward else k + 1
            e = min(src, k)
            sl_dst = tuple(slice(None) if a != axis else k for a in range(m))
            sl_src = tuple(slice(None) if a != axis else src for a in range(m))
            sl_edge = tuple(slice(None) if a != axis else e for a in range(m))
            ok = edge_ok[axis][sl_edge] & aligned[sl_src] & ~aligned[sl_dst] & valid[sl_dst]
            if not ok.any():
                continue
            mm = matches[axis][sl_edge]
            o_src = ordering[sl_src]
            if forward:
                new_o = _compose(o_src, mm)
            else:
                new_o = _compose(o_src, _invert_perms(mm))
            ordering[sl_dst] = np.where(ok[..., None], new_o, ordering[sl_dst])
            a_dst = aligned[sl_dst]
            a_dst |= ok
            aligned[sl_dst] = a_dst
            changed = True
        return changed

    # comb passes: axis 0 line, axis 1 slab, ...
    for axis in range(m):
        propagate(axis, True)
        propagate(axis, False)
    # wavefront cleanup until stable
    for _ in range(int(np.sum(shape))):
        any_change = False
        for axis in range(m):
            any_change |= propagate(axis, True)
            any_change |= propagate(axis, False)
        if not any_change:
            break
    return ordering, aligned


def _plaquette_flags(trans: list, edge_ok: list, shape, Q: int):
    """Nontrivial-holonomy flags per axis pair, and per-plaquette loops."""
    m = len(shape)
    ident = np.arange(Q)
    flags = {}
    loops = {}
    for a in range(m):
        for b in range(a + 1, m):
            def cut(arr, axis, lo):
                sl = tuple(slice(None) if k != axis else (slice(0, -1) if lo else slice(1, None))
                           for k in range(m))
                return arr[sl]
            # loop: +a at b_lo, +b at a_hi, -a at b_hi, -b at a_lo
            e1 = cut(trans[a], b, True);   k1 = cut(edge_ok[a], b, True)
            e2 = cut(trans[b], a, False);  k2 = cut(edge_ok[b], a, False)
            e3 = _invert_perms(cut(trans[a], b, False)); k3 = cut(edge_ok[a], b, False)
            e4 = _invert_perms(cut(trans[b], a, True));  k4 = cut(edge_ok[b], a, True)
            loop = _compose(_compose(_compose(e1, e2), e3), e4)
            ok = k1 & k2 & k3 & k4
            nontriv = ok & (loop != ident).any(-1)
            flags[(a, b)] = nontriv
            loops[(a, b)] = loop
    return flags, loops


def sheet_align(f: QGridField) -> SheetChart:
    """Glue per-node multisets into global sheets; locate branch cells."""
    dom = f.domain
    m = dom.m
    Q = f.q
    valid = f.mask
    perms = _perm_table(Q) if Q <= _PERM_ENUM_MAX_Q else None
    matches, amb, eok = [], [], []
    for a in range(m):
        sl_lo = tuple(slice(None) if k != a else slice(0, -1) for k in range(m))
        sl_hi = tuple(slice(None) if k != a else slice(1, None) for k in range(m))
        u = np.nan_to_num(f.samples[sl_lo], nan=0.0)
        v = np.nan_to_num(f.samples[sl_hi], nan=0.0)
        mk, am = _edge_match(u, v, perms)
        ok = valid[sl_lo] & valid[sl_hi]
        matches.append(mk)
        amb.append(am & ok)
        eok.append(ok)
    ordering, aligned_mask = _comb_align(valid, matches, eok, Q)
    aligned = np.take_along_axis(f.samples, ordering[..., None], axis=-2)
    # residual permutations: inv(o_v) . match . o_u
    trans = []
    for a in range(m):
        sl_lo = tuple(slice(None) if k != a else slice(0, -1) for k in range(m))
        sl_hi = tuple(slice(None) if k != a else slice(1, None) for k in range(m))
        rho = _compose(_compose(ordering[sl_lo], matches[a]), _invert_perms(ordering[sl_hi]))
        trans.append(rho)
        eok[a] = eok[a] & aligned_mask[sl_lo] & aligned_mask[sl_hi]
    flags, loops = _plaquette_flags(trans, eok, dom.shape, Q)

    # branch cells: m-dim cells with a nontrivial plaquette face or an
    # ambiguous edge; conservative over-flagging is preferred to mis-gluing.
    cell_shape = tuple(s - 1 for s in dom.shape)
    cell_flag = np.zeros(cell_shape, dtype=bool)
    amb_flag = np.zeros(cell_shape, dtype=bool)
    holonomy = {}
    for (a, b), fl in flags.items():
        if not fl.any():
            continue
        for idx in np.argwhere(fl):
            # plaquette index: cell position along a,b; node position otherwise
            base = list(idx)
            free_axes = [k for k in range(m) if k not in (a, b)]
            shifts = itertools.product(*[(0, -1)] * len(free_axes)) if free_axes else [()]
            for sh in shifts:
                c = base.copy()
                for ax, s in zip(free_axes, sh):
                    c[ax] += s
                c = tuple(c)
                if all(0 <= c[k] < cell_shape[k] for k in range(m)):
                    cell_flag[c] = True
                    if m == 2:
                        holonomy[c] = tuple(loops[(a, b)][tuple(idx)])
    for a in range(m):
        if not amb[a].any():
            continue
        for idx in np.argwhere(amb[a]):
            free_axes = [k for k in range(m) if k != a]
            for sh in itertools.product(*[(0, -1)] * len(free_axes)):
                c = list(idx)
                for ax, s in zip(free_axes, sh):
                    c[ax] += s
                c = tuple(c)
                if all(0 <= c[k] < cell_shape[k] for k in range(m)):
                    cell_flag[c] = True
                    amb_flag[c] = True
    cells = frozenset(map(tuple, np.argwhere(cell_flag)))
    amb_cells = frozenset(map(tuple, np.argwhere(amb_flag)))
    return SheetChart(f, aligned, aligned_mask, ordering, trans, eok,
                      cells, amb_cells, holonomy)


def detect_branch_points(f: QGridField) -> frozenset:
    """Cells carrying nontrivial monodromy of a planar field."""
    if f.domain.m != 2:
        raise DomainError("branch-point detection is planar (m = 2)")
    return sheet_align(f).branch_cells


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------

def _perm_cycles(perm: Iterable[int]) -> list:
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


def branch_cell_model(chart: SheetChart, cell: tuple):
    """Fit the local branched model at a planar branch cell.

    Each holonomy cycle of length K is modeled as K sheets of an
    amplitude-c K-fold cover; the amplitude comes from the dispersion of
    the cycle sheets on a ring of nearby nodes and the branch point from
    minimizing the fit spread over a subgrid of the cell. Returns
    (energy over the excised 2h x 2h block, diagnostics dict).
    """
    dom = chart.field.domain
    i, j = cell
    h = dom.h[0]
    xs_all, ys_all = dom.axis_coords(0), dom.axis_coords(1)
    cx, cy = 0.5 * (xs_all[i] + xs_all[i + 1]), 0.5 * (ys_all[j] + ys_all[j + 1])
    lo_i, hi_i = max(i - 5, 0), min(i + 7, dom.shape[0])
    lo_j, hi_j = max(j - 5, 0), min(j + 7, dom.shape[1])
    X, Y = np.meshgrid(xs_all[lo_i:hi_i], ys_all[lo_j:hi_j], indexing="ij")
    vals = chart.aligned[lo_i:hi_i, lo_j:hi_j]
    okn = chart.valid[lo_i:hi_i, lo_j:hi_j]
    rr = np.hypot(X - cx, Y - cy)
    ring = okn & (rr >= _ROOT_RING[0] * h) & (rr <= _ROOT_RING[1] * h)
    if not ring.any():
        return 0.0, {"cells": 0, "note": "no ring nodes"}
    # block: union of the four corner node cells
    bx0, bx1 = xs_all[i] - h / 2, xs_all[i + 1] + h / 2
    by0, by1 = ys_all[j] - h / 2, ys_all[j + 1] + h / 2
    sx = np.linspace(bx0, bx1, _BLOCK_SUBGRID)
    sy = np.linspace(by0, by1, _BLOCK_SUBGRID)
    SX, SY = np.meshgrid(sx, sy, indexing="ij")
    dA = (sx[1] - sx[0]) * (sy[1] - sy[0])
    perm = chart.holonomy.get(cell, tuple(range(chart.q)))
    energy = 0.0
    diag = {"cycles": [], "residual": 0.0}
    zs = np.stack([X[ring], Y[ring]], -1)
    for cyc in _perm_cycles(perm):
        K = len(cyc)
        if K == 1:
            continue
        w = vals[..., cyc, :]
        disp = ((w - w.mean(-2, keepdims=True)) ** 2).sum((-2, -1))
        D = disp[ring]
        good = D > 0
        if good.sum() < 4:
            continue
        # branch point: minimize the spread of log D - (2/K) log r over the cell
        bxs = np.linspace(xs_all[i], xs_all[i + 1], _MODEL_SUBGRID)
        bys = np.linspace(ys_all[j], ys_all[j + 1], _MODEL_SUBGRID)
        BX, BY = np.meshgrid(bxs, bys, indexing="ij")
        r_nb = np.hypot(zs[good, None, None, 0] - BX[None], zs[good, None, None, 1] - BY[None])
        logc = np.log(D[good])[:, None, None] - (2.0 / K) * np.log(r_nb)
        var = logc.var(axis=0)
        kmin = np.unravel_index(np.argmin(var), var.shape)
        b = (BX[kmin], BY[kmin])
        c2 = np.exp(logc[:, kmin[0], kmin[1]].mean()) / K
        resid = float(var[kmin])
        rU = np.hypot(SX - b[0], SY - b[1])
        e_cyc = (2.0 * c2 / K) * float((rU ** (2.0 / K - 2)).sum()) * dA
        energy += e_cyc
        diag["cycles"].append({"K": K, "amplitude_sq": float(c2),
                               "branch_point": [float(b[0]), float(b[1])],
                               "energy": float(e_cyc), "fit_residual": resid})
        diag["residual"] = max(diag["residual"], resid)
    # smooth background: ring-average density of the cycle means and fixed sheets
    grad, gvalid = chart.gradient()
    gring = ring & gvalid[lo_i:hi_i, lo_j:hi_j]
    if gring.any():
        g = grad[lo_i:hi_i, lo_j:hi_j]
        fixed = [s for c in _perm_cycles(perm) if len(c) == 1 for s in c]
        dens = 0.0
        if fixed:
            dens += (g[..., fixed, :] ** 2).sum((-3, -2, -1))
        for cyc in _perm_cycles(perm):
            if len(cyc) > 1:
                gm = g[..., cyc, :].mean(-2)
                dens = dens + (gm ** 2).sum((-2, -1))
        if np.ndim(dens):
            block_area = (bx1 - bx0) * (by1 - by0)
            energy += float(np.mean(dens[gring])) * block_area
    return energy, diag


def _singular_correction(chart: SheetChart, region: Region):
    """Summed model energies of branch cells inside the region (m = 2)."""
    if chart.field.domain.m != 2 or not chart.branch_cells:
        return 0.0, []
    dom = chart.field.domain
    xs, ys = dom.axis_coords(0), dom.axis_coords(1)
    total, items = 0.0, []
    for cell in sorted(chart.branch_cells):
        i, j = cell
        c = (0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1]))
        if not region.contains_point(c):
            continue
        e, diag = branch_cell_model(chart, cell)
        total += e
        items.append((cell, e, diag))
    return total, items


def dirichlet_energy(f: QGridField, chart: SheetChart, region: Optional[Region] = None,
                     singular_correction: bool = True) -> float:
    """Discrete Dirichlet energy sum_i |Df_i|^2 over the region.

    Central differences per aligned sheet times the cell volume; branch
    cells are excluded from the stencil and contribute through the local
    branched-model quadrature instead (planar fields).
    """
    region = region or Region.whole()
    region.check_inside(f.domain)
    grad, gvalid = chart.gradient()
    dens = np.where(gvalid, (grad ** 2).sum(axis=(-3, -2, -1)), 0.0)
    sel = gvalid & region.node_mask(f.domain)
    E = float(dens[sel].sum() * f.domain.cell_volume)
    if singular_correction:
        corr, _ = _singular_correction(chart, region)
        E += corr
    return E


def gradient_norm_field(f: QGridField, chart: SheetChart) -> np.ndarray:
    """Pointwise sqrt(sum_i |Df_i|^2); NaN on branch cells and mask edges."""
    grad, gvalid = chart.gradient()
    dens = (grad ** 2).sum(axis=(-3, -2, -1))
    return np.where(gvalid, np.sqrt(dens), np.nan)


def lp_gradient_norm(f: QGridField, chart: SheetChart, p: float,
                     region: Optional[Region] = None) -> float:
    """(sum |Du|^p * cell volume)^(1/p) over unmasked stencil nodes."""
    if not np.isfinite(p) or p < 1:
        raise ValueError(f"p must be finite and >= 1, got {p}")
    region = region or Region.whole()
    region.check_inside(f.domain)
    grad, gvalid = chart.gradient()
    dens = (grad ** 2).sum(axis=(-3, -2, -1))
    sel = gvalid & region.node_mask(f.domain)
    return float((dens[sel] ** (p / 2)).sum() * f.domain.cell_volume) ** (1.0 / p)


@dataclass
class DecayFit:
    alpha: float
    residual: float
    radii: np.ndarray
    energies: np.ndarray


def holder_decay_fit(f: QGridField, chart: SheetChart, center, radii,
                     singular_correction: bool = True) -> DecayFit:
    """Least-squares slope of log Dir(B_r) against log r, halved."""
    radii = np.asarray(sorted(radii), dtype=float)
    if len(radii) < 4:
        raise ValueError("need at least 4 radii for a decay fit")
    energies = np.array([
        dirichlet_energy(f, chart, Region.ball(center, r), singular_correction)
        for r in radii
    ])
    if np.any(energies <= 0):
        raise UndefinedFitError("zero Dirichlet energy in a fit ball")
    lr, ld = np.log(radii), np.log(energies)
    A = np.vstack([lr, np.ones_like(lr)]).T
    sol, *_ = np.linalg.lstsq(A, ld, rcond=None)
    resid = float(np.sqrt(np.mean((ld - A @ sol) ** 2)))
    return DecayFit(float(sol[0] / 2.0), resid, radii, energies)


def mean_deviation_split(f: QGridField, chart: SheetChart):
    """Split into the sheet mean and the centered deviation field."""
    phi = f.samples.mean(axis=-2)
    phi_field = QGridField.from_values(f.domain, np.nan_to_num(phi[..., None, :]))
    v = QGridField.from_values(f.domain, np.nan_to_num(f.samples - phi[..., None, :]))
    return phi_field, v


def five_point_laplacian_residual(values: np.ndarray, valid: np.ndarray,
                                  scale: Optional[float] = None) -> float:
    """Max |4u - sum of neighbors| over nodes with four valid neighbors,
    relative to `scale` (default: the value range). Vector-valued inputs
    use the last axis."""
    v = values if values.ndim > valid.ndim else values[..., None]
    inner = valid[1:-1, 1:-1] & valid[:-2, 1:-1] & valid[2:, 1:-1] & valid[1:-1, :-2] & valid[1:-1, 2:]
    lap = (4 * v[1:-1, 1:-1] - v[:-2, 1:-1] - v[2:, 1:-1] - v[1:-1, :-2] - v[1:-1, 2:])
    mag = np.abs(lap).max(-1)
    if scale is None:
        scale = float(np.nanmax(np.abs(v))) or 1.0
    if not inner.any():
        return 0.0
    return float(np.nanmax(np.where(inner, mag, 0.0)) / scale)


@dataclass
class EnergyReport:
    """Per-region energies, norms, fitted exponents, inequality ratios."""

    region: str
    dirichlet: float
    lp_norms: dict = dc_field(default_factory=dict)
    fitted_alpha: Optional[float] = None
    fit_residual: Optional[float] = None
    ratios: dict = dc_field(default_factory=dict)
    extras: dict = dc_field(default_factory=dict)

    def to_json(self) -> dict:
        d = {"region": self.region, "dirichlet": self.dirichlet,
             "lp_norms": {str(k): v for k, v in self.lp_norms.items()},
             "ratios": dict(self.ratios)}
        if self.fitted_alpha is not None:
            d["fitted_alpha"] = self.fitted_alpha
            d["fit_residual"] = self.fit_residual
        d.update(self.extras)
        return d
