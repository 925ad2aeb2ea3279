"""Figure builders for the four report kinds.

decay: log-log energy decay with the fitted slope and the reference
slope 2/Q. probe: integrability classification per exponent with the
sharp-threshold marker 2Q/(Q-1). taylor: scaling-expansion convergence.
compare: nodewise error statistics of a field comparison.

Rendering is read-only and deterministic for fixed inputs and size.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "qval-plot"

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("decay", "probe", "taylor", "compare")

_SCHEMAS = {
    "decay": ("r", "dir_energy", "log_r", "log_dir"),
    "probe": ("p", "annulus_eps", "integral", "classification"),
    "taylor": ("lambda", "taylor_value"),
}

_CLASS_COLORS = {"convergent": "#2a9d3f", "divergent": "#c03428",
                 "ambiguous": "#888888"}


class SchemaError(ValueError):
    """Input file does not match the documented schema."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple
    output: str
    ref_q: Optional[int] = None
    size: tuple = (6.4, 4.8)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "inputs", tuple(self.inputs))


def _read_csv(path: str, kind: str) -> dict:
    columns = _SCHEMAS[kind]
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise SchemaError(f"{path}: empty file, expected columns {columns}")
        missing = [c for c in columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}; found {header}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    out = {}
    for c in columns:
        if c == "classification":
            out[c] = [r[c] for r in rows]
        else:
            try:
                out[c] = np.array([float(r[c]) for r in rows])
            except ValueError as e:
                raise SchemaError(f"{path}: column {c!r} is not numeric: {e}") from None
    return out


def _read_compare(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: not valid JSON: {e}") from None
    needed = ("sup_error", "mean_error", "energy_gap")
    missing = [k for k in needed if k not in data]
    if missing:
        raise SchemaError(f"{path}: missing key(s) {missing}")
    return data


def _build_decay(data: dict, ref_q: Optional[int], size) -> plt.Figure:
    fig, ax = plt.subplots(figsize=size)
    lr, ld = data["log_r"], data["log_dir"]
    ax.plot(lr, ld, "o", color="#1f5fa8", label="measured")
    A = np.vstack([lr, np.ones_like(lr)]).T
    sol, *_ = np.linalg.lstsq(A, ld, rcond=None)
    xs = np.array([lr.min(), lr.max()])
    ax.plot(xs, sol[0] * xs + sol[1], "-", color="#1f5fa8",
            label=f"fit: slope {sol[0]:.3f} (alpha {sol[0] / 2:.3f})")
    if ref_q:
        ref_slope = 2.0 / ref_q
        anchor = sol[0] * lr.mean() + sol[1]
        line, = ax.plot(xs, ref_slope * (xs - lr.mean()) + anchor, "--",
                        color="#c03428", label=f"reference slope 2/Q = {ref_slope:.3f}")
        line.set_gid("reference-slope")
    ax.set_xlabel("log r")
    ax.set_ylabel("log Dir(B_r)")
    ax.set_title("energy decay")
    ax.legend()
    return fig


def _build_probe(data: dict, ref_q: Optional[int], size) -> plt.Figure:
    fig, ax = plt.subplots(figsize=size)
    ps = np.unique(data["p"])
    totals, classes = [], []
    for p in ps:
        sel = data["p"] == p
        totals.append(data["integral"][sel].sum())
        classes.append(data["classification"][int(np.argmax(sel))])
    for cls in ("convergent", "divergent", "ambiguous"):
        sel = [c == cls for c in classes]
        if any(sel):
            ax.semilogy(ps[sel], np.asarray(totals)[sel], "o",
                        color=_CLASS_COLORS[cls], label=cls)
    if ref_q:
        thr = 2.0 * ref_q / (ref_q - 1) if ref_q > 1 else None
        if thr:
            line = ax.axvline(thr, color="#c03428", linestyle="--",
                              label=f"threshold 2Q/(Q-1) = {thr:.3f}")
            line.set_gid("threshold")
    ax.set_xlabel("p")
    ax.set_ylabel("sum of shell integrals of |Du|^p")
    ax.set_title("gradient integrability probe")
    ax.legend()
    return fig


def _build_taylor(data: dict, size) -> plt.Figure:
    fig, ax = plt.subplots(figsize=size)
    lam, val = data["lambda"], data["taylor_value"]
    order = np.argsort(lam)
    ax.semilogx(lam[order], val[order], "o-", color="#1f5fa8",
                label="(mass - Q|Omega|) / lambda^2")
    ax.axhline(val[order][0], color="#c03428", linestyle="--",
               label=f"smallest-lambda value {val[order][0]:.5f}")
    ax.set_xlabel("lambda")
    ax.set_ylabel("scaled mass excess")
    ax.set_title("mass expansion convergence")
    ax.legend()
    return fig


def _build_compare(data: dict, size) -> plt.Figure:
    fig, ax = plt.subplots(figsize=size)
    keys = ["sup_error", "mean_error", "energy_gap"]
    vals = [abs(data[k]) for k in keys]
    bars = ax.bar(range(len(keys)), vals, color="#1f5fa8")
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels(["sup G-error", "mean G-error", "|energy gap|"])
    if all(v > 0 for v in vals):
        ax.set_yscale("log")
    for bar, v in zip(bars, vals):
        ax.text(bar.get_x() + bar.get_width() / 2, bar.get_height(),
                f"{v:.3g}", ha="center", va="bottom")
    ax.set_title("field comparison")
    return fig


def build_figure(spec: FigureSpec) -> plt.Figure:
    """Load inputs, validate schemas, and build the matplotlib figure."""
    if not spec.inputs:
        raise SchemaError("no input files given")
    for path in spec.inputs:
        if not os.path.exists(path):
            raise SchemaError(f"input {path} does not exist")
    if spec.kind == "decay":
        return _build_decay(_read_csv(spec.inputs[0], "decay"), spec.ref_q, spec.size)
    if spec.kind == "probe":
        return _build_probe(_read_csv(spec.inputs[0], "probe"), spec.ref_q, spec.size)
    if spec.kind == "taylor":
        return _build_taylor(_read_csv(spec.inputs[0], "taylor"), spec.size)
    return _build_compare(_read_compare(spec.inputs[0]), spec.size)


def render(spec: FigureSpec) -> str:
    """Write the figure to spec.output (PNG or SVG); returns the path.

    Nothing is written when the inputs fail validation."""
    fig = build_figure(spec)
    try:
        fig.savefig(spec.output, dpi=120, metadata=_clean_metadata(spec.output))
    finally:
        plt.close(fig)
    return spec.output


def _clean_metadata(path: str):
    # strip volatile fields so identical inputs give identical bytes
    if path.endswith(".svg"):
        return {"Date": None}
    if path.endswith(".png"):
        return {"Software": None}
    return None
