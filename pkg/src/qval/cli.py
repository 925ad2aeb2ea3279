"""Experiment runner.

Each command samples or loads a field, runs one analysis pipeline, and
writes report.json plus one CSV per sweep into the output directory.
Floats are printed with 17 significant digits; identical configurations
and seeds produce byte-identical CSV bodies. Exit status: 0 on success,
2 when an integrability probe is inconclusive, 1 on any error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _parse_sweep(text: str, geometric: bool):
    """start:end:count sweeps (inclusive); comma lists pass through."""
    import numpy as np
    if ":" in text:
        start, end, count = text.split(":")
        start, end, count = float(start), float(end), int(count)
        if geometric:
            return np.geomspace(start, end, count)
        return np.linspace(start, end, count)
    return np.asarray([float(v) for v in text.split(",")])


def _require_pow2(res: int) -> int:
    if res < 16 or res > 1024 or (res & (res - 1)) != 0:
        raise ValueError(f"resolution {res} not a power of two in [16, 1024]")
    return res


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def _write_report(outdir, command, config, results):
    import qval
    report = {"version": qval.__version__, "command": command,
              "config": config, "results": results}
    with open(os.path.join(outdir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_field(args):
    """Field + chart from --cover (sampled on a disk) or --input (.qgf)."""
    from qval import GridDomain, QGridField, sample_variety, sheet_align
    from qval.varieties import BranchedCoverSpec
    if getattr(args, "input", None):
        f = QGridField.load(args.input)
    else:
        spec = BranchedCoverSpec.from_string(args.cover)
        dom = GridDomain.disk(tuple(args.center), args.radius, args.res)
        f = sample_variety(spec, dom)
    return f, sheet_align(f)


def _center_pair(text):
    a, b = text.split(",")
    return (float(a), float(b))


def cmd_sample(args, outdir):
    f, chart = _load_field(args)
    from qval import dirichlet_energy
    path = os.path.join(outdir, "field.qgf")
    f.save(path)
    dir_e = dirichlet_energy(f, chart)
    _write_report(outdir, "sample", _config(args),
                  {"field": path, "dirichlet": dir_e,
                   "branch_cells": sorted([int(i), int(j)] for (i, j) in chart.branch_cells)})
    return 0


def cmd_decay(args, outdir):
    from qval import holder_decay_fit
    import numpy as np
    f, chart = _load_field(args)
    radii = _parse_sweep(args.radii, geometric=True)
    fit = holder_decay_fit(f, chart, args.center, radii)
    rows = [(float(r), float(e), float(np.log(r)), float(np.log(e)))
            for r, e in zip(fit.radii, fit.energies)]
    _write_csv(os.path.join(outdir, "decay.csv"),
               ["r", "dir_energy", "log_r", "log_dir"], rows)
    _write_report(outdir, "decay", _config(args),
                  {"fitted_alpha": fit.alpha, "fit_residual": fit.residual})
    return 0


def cmd_probe(args, outdir):
    from qval import integrability_probe
    import numpy as np
    f, chart = _load_field(args)
    p_grid = _parse_sweep(args.p, geometric=False)
    h = max(f.domain.h[:2])
    if args.annuli:
        inner = _parse_sweep(args.annuli, geometric=True)
    else:
        eps = [args.annulus_outer / 2]
        while eps[-1] / 2 >= 4 * h:
            eps.append(eps[-1] / 2)
        inner = np.asarray(eps)
    result = integrability_probe(f, chart, args.center, p_grid, inner,
                                 outer_radius=args.annulus_outer)
    rows = []
    for ip, p in enumerate(result.p_grid):
        for k in range(result.shells.shape[1]):
            rows.append((float(p), float(result.radii[k + 1]),
                         float(result.shells[ip, k]), result.classification[ip]))
    _write_csv(os.path.join(outdir, "probe.csv"),
               ["p", "annulus_eps", "integral", "classification"], rows)
    _write_report(outdir, "probe", _config(args), result.to_json())
    return 2 if result.inconclusive else 0


def cmd_mass_taylor(args, outdir):
    from qval import mass_taylor_fit
    f, chart = _load_field(args)
    lambdas = _parse_sweep(args.lambdas, geometric=True)
    fit = mass_taylor_fit(f, chart, None, lambdas)
    rows = [(float(lam), float(v)) for lam, v in zip(fit.lambdas, fit.values)]
    _write_csv(os.path.join(outdir, "taylor.csv"), ["lambda", "taylor_value"], rows)
    _write_report(outdir, "mass-taylor", _config(args), fit.to_json())
    return 0


def cmd_caccioppoli(args, outdir):
    import numpy as np
    from qval import CutoffSpec, caccioppoli_ratio
    from qval.aq_space import QPoint, eta_mean
    f, chart = _load_field(args)
    rng = np.random.default_rng(args.seed)
    rows = []
    worst = 0.0
    for k in range(args.sweep):
        r2 = rng.uniform(0.4, 0.95) * args.radius
        r1 = rng.uniform(0.3, 0.85) * r2
        kind = ("zero", "mean", "random")[k % 3]
        if kind == "zero":
            P = np.zeros(f.n)
        elif kind == "mean":
            center_node = tuple(s // 2 for s in f.domain.shape)
            P = f.samples[center_node].mean(axis=0)
        else:
            P = rng.normal(0.0, 1.0, size=f.n)
        ratio = caccioppoli_ratio(f, chart, P, CutoffSpec(args.center, r1, r2))
        worst = max(worst, ratio)
        rows.append((kind, float(P[0]), float(P[1]), float(r1), float(r2), float(ratio)))
    _write_csv(os.path.join(outdir, "caccioppoli.csv"),
               ["P_kind", "P_x", "P_y", "r1", "r2", "ratio"], rows)
    _write_report(outdir, "caccioppoli", _config(args), {"max_ratio": worst})
    return 0


def cmd_reverse_holder(args, outdir):
    import numpy as np
    from qval import reverse_holder_ratio
    from qval.estimates import default_s
    f, chart = _load_field(args)
    rng = np.random.default_rng(args.seed)
    s = default_s(f.domain.m)
    rows = []
    ratios = []
    for _ in range(args.centers):
        ang = rng.uniform(0, 2 * np.pi)
        rad = rng.uniform(0, 0.4) * args.radius
        c = (args.center[0] + rad * np.cos(ang), args.center[1] + rad * np.sin(ang))
        for r in np.geomspace(0.05, 0.25, args.nradii) * args.radius:
            if np.hypot(*c) + 2 * r > args.radius:
                continue
            ratio = reverse_holder_ratio(f, chart, c, r, s)
            ratios.append(ratio)
            rows.append((float(c[0]), float(c[1]), float(r), float(s), float(ratio)))
    _write_csv(os.path.join(outdir, "reverse_holder.csv"),
               ["center_x", "center_y", "r", "s", "ratio"], rows)
    _write_report(outdir, "reverse-holder", _config(args),
                  {"constant": max(ratios), "mean_ratio": float(np.mean(ratios))})
    return 0


def cmd_minimize(args, outdir):
    from qval import boundary_from_cover, solve_planar, sheet_align, dirichlet_energy
    from qval.varieties import BranchedCoverSpec
    spec = BranchedCoverSpec.from_string(args.cover)
    boundary = boundary_from_cover(spec, args.center, args.radius)
    field = solve_planar(boundary, [args.branch_point], args.res)
    path = os.path.join(outdir, "minimized.qgf")
    field.save(path)
    chart = sheet_align(field)
    _write_report(outdir, "minimize", _config(args),
                  {"field": path, "dirichlet": dirichlet_energy(field, chart),
                   "monodromy": [int(v) for v in boundary.monodromy]})
    return 0


def cmd_compare(args, outdir):
    import qval
    from qval import QGridField
    from qval.minimizer import compare_fields
    a = QGridField.load(args.input)
    b = QGridField.load(args.input2)
    if a.domain != b.domain or a.q != b.q or a.n != b.n:
        raise ValueError("fields live on different grids")
    stats = compare_fields(a, b)
    stats["config"] = _config(args)
    stats["version"] = qval.__version__
    with open(os.path.join(outdir, "compare.json"), "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_mass(args, outdir):
    import numpy as np
    from qval import graph_mass, dirichlet_energy
    f, chart = _load_field(args)
    mass = graph_mass(f, chart)
    dir_e = dirichlet_energy(f, chart)
    measure = float(f.mask.sum() * f.domain.cell_volume)
    _write_report(outdir, "mass", _config(args), {
        "mass": mass, "dirichlet": dir_e, "measure": measure,
        "mass_energy_identity": {
            "per_measure": f.q * measure + dir_e / 2.0,
            "per_count": f.q + dir_e / 2.0,
            "note": "flat term printed per-measure (Q|Omega|) and per-count (Q)",
        }})
    return 0


def _config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func" and v is not None}
    for k, v in cfg.items():
        if isinstance(v, tuple):
            cfg[k] = list(v)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="qval",
        description="Q-valued field experiments: sampling, energies, decay fits, "
                    "integrability probes, interior estimates, and the planar "
                    "glued-sheet Dirichlet solver.",
        epilog="Sweeps use start:end:count (inclusive; geometric for radii and "
               "lambdas, linear for p) or comma lists. QVAL_THREADS caps the "
               "numerical thread pools.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, res=True):
        sp.add_argument("--cover", help="cover spec: power:Q or inline JSON")
        sp.add_argument("--input", help="path to a .qgf field (instead of --cover)")
        if res:
            sp.add_argument("--res", type=int, default=256,
                            help="grid resolution, power of two in [16, 1024]")
        sp.add_argument("--radius", type=float, default=1.0, help="disk radius")
        sp.add_argument("--center", type=_center_pair, default=(0.0, 0.0),
                        metavar="X,Y", help="disk center / analysis center")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=0, help="sweep RNG seed")

    sp = sub.add_parser("sample", help="sample a cover onto a disk grid")
    common(sp)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("decay", help="energy decay fit around a point")
    common(sp)
    sp.add_argument("--radii", default="0.1:0.9:8", help="ball radii sweep")
    sp.set_defaults(func=cmd_decay)

    sp = sub.add_parser("probe", help="gradient integrability threshold probe")
    common(sp)
    sp.add_argument("--p", default="2.5:5.0:11", help="exponent sweep in [2, 8]")
    sp.add_argument("--annuli", default=None,
                    help="inner radii sweep; default halves down to 4h")
    sp.add_argument("--annulus-outer", type=float, default=0.5)
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("mass-taylor", help="small-scaling mass expansion")
    common(sp)
    sp.add_argument("--lambdas", default="1,0.5,0.25,0.125")
    sp.set_defaults(func=cmd_mass_taylor)

    sp = sub.add_parser("caccioppoli", help="cutoff energy inequality sweep")
    common(sp)
    sp.add_argument("--sweep", type=int, default=24, help="number of (P, cutoff) pairs")
    sp.set_defaults(func=cmd_caccioppoli)

    sp = sub.add_parser("reverse-holder", help="reverse Holder constant sweep")
    common(sp)
    sp.add_argument("--centers", type=int, default=10)
    sp.add_argument("--nradii", type=int, default=4)
    sp.set_defaults(func=cmd_reverse_holder)

    sp = sub.add_parser("minimize", help="solve the glued Dirichlet problem")
    common(sp)
    sp.add_argument("--branch-point", type=_center_pair, default=(0.0, 0.0),
                    metavar="X,Y")
    sp.set_defaults(func=cmd_minimize)

    sp = sub.add_parser("compare", help="nodewise comparison of two fields")
    sp.add_argument("--input", required=True)
    sp.add_argument("--input2", required=True)
    sp.add_argument("--out", default=".")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("mass", help="graph-current mass via the area formula")
    common(sp)
    sp.set_defaults(func=cmd_mass)
    return p


def main(argv=None) -> int:
    if os.environ.get("QVAL_THREADS"):
        t = os.environ["QVAL_THREADS"]
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, t)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:   # argparse prints its own diagnostic
        return 0 if e.code == 0 else 1
    try:
        if getattr(args, "res", None) is not None:
            _require_pow2(args.res)
        if getattr(args, "cover", None) is None and getattr(args, "input", None) is None \
                and args.command != "compare":
            raise ValueError("need --cover or --input")
        outdir = args.out
        os.makedirs(outdir, exist_ok=True)
        return args.func(args, outdir)
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
