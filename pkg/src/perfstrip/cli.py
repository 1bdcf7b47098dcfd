"""Command-line interface: ``perfstrip <command> [config.ini] [--set section.key=value]``.

Commands: ``limit``, ``cell-constants``, ``dispersion``, ``gaps``, ``verify``.
Exit codes: 0 success, 2 configuration error, 3 mesh or solver error,
4 verification failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass

import numpy as np

from . import acceptance
from .asymptotics import predicted_gaps
from .band_sweep import sweep, extract_bands_gaps, compare_asymptotics, SweepError
from .cell_constants import compute_cell_constants, TruncationError, DecayError, _jsonable
from .fem import AssemblyError, CapacityError, SolverError, SolvabilityError
from .geometry import (CellSpec, GeometryError, HoleShape, StripSpec, default_truncation,
                       mirror_symmetry_defect)
from .limit_model import find_nodes, limit_eigenvalues, ExceptionalHWarning
from .meshgen import MeshError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4

# section -> key -> (type, default, help)
SCHEMA = {
    "geometry": {
        "H": (float, 0.4, "strip height"),
        "N": (int, 8, "holes per period (eps = 1/N); 0 for the unperforated strip"),
        "hole": (str, "disk", "hole kind: disk, ellipse, star, or none"),
        "center": (str, "", "hole center in strip coordinates xi (empty: 0,H/2)"),
        "params": (str, "0.08", "shape parameters, comma separated"),
        "boundary_tolerance": (str, "", "polygon sagitta tolerance (empty: 1e-3 diam)"),
    },
    "fem": {
        "target_h": (str, "", "cell mesh size near holes (empty: 0.01*eps, or 0.01)"),
        "grading": (float, 1.3, "mesh size growth rate away from holes"),
        "dense_ceiling": (int, 1000, "largest DOF count solved densely"),
        "tolerance": (float, 1e-9, "eigenpair backward-error tolerance"),
    },
    "sweep": {
        "eta_samples": (int, 33, "uniform eta samples on [-pi, pi]"),
        "bands": (int, 4, "eigenvalues per eta"),
        "psi_max": (float, 8.0, "half width of node windows in the fast variable"),
        "window_samples": (int, 17, "samples per node window"),
        "workers": (int, 1, "worker threads for per-eta solves"),
    },
    "limit": {
        "eta_samples": (int, 201, "eta samples of the limit plot"),
        "bands": (int, 6, "curves drawn"),
        "lambda_max": (str, "", "node search ceiling (empty: top of the drawn curves)"),
    },
    "cell_constants": {
        "T": (str, "", "strip half length (empty: automatic)"),
        "target_h": (float, 0.0025, "strip mesh size near the hole"),
        "grading": (float, 1.3, "strip mesh growth rate"),
        "cross_tolerance": (float, 0.01, "relative tolerance between the two m1 routes"),
    },
    "output": {
        "directory": (str, "perfstrip-out", "output directory"),
        "formats": (str, "csv,json,svg", "subset of csv, json, svg"),
    },
    "run": {
        "deterministic": (str, "true", "always on; results do not depend on scheduling"),
    },
}


class ConfigError(ValueError):
    pass


class VerificationFailure(RuntimeError):
    pass


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def out(self) -> str:
        return self.values["output"]["directory"]

    @property
    def formats(self) -> set:
        return set(self.values["output"]["formats"])


def _convert(section, key, raw):
    typ = SCHEMA[section][key][0]
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot read {raw!r} as {typ.__name__}")


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then the INI file, then ``section.key=value`` overrides."""
    raw = {s: {k: str(v[1]) for k, v in keys.items()} for s, keys in SCHEMA.items()}
    if path:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        for sec in cp.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown section [{sec}]")
            for k, v in cp.items(sec):
                if k not in SCHEMA[sec]:
                    raise ConfigError(f"unknown key {sec}.{k}")
                raw[sec][k] = v
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        lhs, v = item.split("=", 1)
        sec, k = lhs.split(".", 1)
        if sec not in SCHEMA or k not in SCHEMA[sec]:
            raise ConfigError(f"unknown key {lhs}")
        raw[sec][k] = v
    vals = {s: {k: _convert(s, k, v) for k, v in keys.items()} for s, keys in raw.items()}
    fm = [f.strip() for f in vals["output"]["formats"].split(",") if f.strip()]
    if not set(fm) <= {"csv", "json", "svg"}:
        raise ConfigError(f"output.formats must be a subset of csv,json,svg; got {fm}")
    vals["output"]["formats"] = fm
    if vals["run"]["deterministic"].lower() not in ("true", "1", "yes", "on"):
        raise ConfigError("run.deterministic cannot be switched off")
    g = vals["geometry"]
    if g["H"] <= 0:
        raise ConfigError("geometry.H must be positive")
    if g["N"] < 0:
        raise ConfigError("geometry.N must be nonnegative")
    if vals["sweep"]["eta_samples"] < 9:
        raise ConfigError("sweep.eta_samples must be at least 9")
    return RunConfig(vals)


def _floats(text):
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"expected comma separated numbers, got {text!r}")


def hole_from(cfg: RunConfig):
    g = cfg["geometry"]
    if g["hole"].lower() == "none":
        return None
    tol = g["boundary_tolerance"].strip()
    center = _floats(g["center"]) if g["center"].strip() else (0.0, g["H"] / 2)
    try:
        return HoleShape(g["hole"], center, _floats(g["params"]),
                         float(tol) if tol else None)
    except GeometryError as exc:
        raise ConfigError(str(exc))


def cell_spec(cfg: RunConfig) -> CellSpec:
    hole = hole_from(cfg)
    N = cfg["geometry"]["N"] if hole is not None else 0
    return CellSpec(cfg["geometry"]["H"], N, hole)


def cell_h(cfg: RunConfig, spec: CellSpec) -> float:
    t = cfg["fem"]["target_h"].strip()
    if t:
        return float(t)
    return 0.01 * spec.epsilon if spec.perforated else 0.01


def _write(cfg, name, text):
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


def _json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


# --- SVG -------------------------------------------------------------------

def svg_dispersion(etas, curves, title="", gaps=(), markers=(), width=640, height=480) -> str:
    """Polylines of ``curves`` over ``etas`` with shaded gap bands and node markers.

    ``gaps`` are ``(lower, upper)`` spectral intervals; ``markers`` are
    ``(eta, value, shape)`` with shape ``'circle'`` (open) or ``'square'``
    (shaded).
    """
    ml, mr, mt, mb = 60, 20, 30, 45
    etas = np.asarray(etas, float)
    ys = np.concatenate([np.asarray(c, float) for c in curves]) if curves else np.zeros(1)
    x0, x1 = -math.pi, math.pi
    y0, y1 = 0.0, float(np.nanmax(ys)) * 1.05 or 1.0

    def X(x):
        return ml + (x - x0) / (x1 - x0) * (width - ml - mr)

    def Y(y):
        return height - mb - (y - y0) / (y1 - y0) * (height - mt - mb)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    for lo, hi in gaps:
        out.append(f'<rect x="{X(x0):.2f}" y="{Y(hi):.2f}" width="{X(x1) - X(x0):.2f}" '
                   f'height="{max(Y(lo) - Y(hi), 0.5):.2f}" fill="#f4c430" fill-opacity="0.45"/>')
    out.append(f'<path d="M{X(x0):.2f},{Y(y0):.2f} H{X(x1):.2f} M{X(x0):.2f},{Y(y0):.2f} '
               f'V{Y(y1):.2f}" stroke="black" fill="none"/>')
    for t, lab in ((-math.pi, "-pi"), (-math.pi / 2, "-pi/2"), (0.0, "0"),
                   (math.pi / 2, "pi/2"), (math.pi, "pi")):
        out.append(f'<line x1="{X(t):.2f}" y1="{Y(y0):.2f}" x2="{X(t):.2f}" '
                   f'y2="{Y(y0) + 5:.2f}" stroke="black"/>')
        out.append(f'<text x="{X(t):.2f}" y="{Y(y0) + 18:.2f}" font-size="12" '
                   f'text-anchor="middle">{lab}</text>')
    step = _nice_step(y1 - y0)
    v = 0.0
    while v <= y1:
        out.append(f'<line x1="{X(x0) - 5:.2f}" y1="{Y(v):.2f}" x2="{X(x0):.2f}" '
                   f'y2="{Y(v):.2f}" stroke="black"/>')
        out.append(f'<text x="{X(x0) - 8:.2f}" y="{Y(v) + 4:.2f}" font-size="11" '
                   f'text-anchor="end">{v:g}</text>')
        v += step
    out.append(f'<text x="{(X(x0) + X(x1)) / 2:.2f}" y="{height - 8}" font-size="13" '
               f'text-anchor="middle">eta</text>')
    out.append(f'<text x="14" y="{(Y(y0) + Y(y1)) / 2:.2f}" font-size="13" '
               f'transform="rotate(-90 14 {(Y(y0) + Y(y1)) / 2:.2f})" '
               f'text-anchor="middle">Lambda</text>')
    if title:
        out.append(f'<text x="{width / 2:.2f}" y="18" font-size="14" '
                   f'text-anchor="middle">{_esc(title)}</text>')
    palette = ("#1f4e79", "#b03a2e", "#1e8449", "#7d3c98", "#b9770e", "#2e4053")
    for i, c in enumerate(curves):
        pts = " ".join(f"{X(x):.2f},{Y(y):.2f}" for x, y in zip(etas, c) if np.isfinite(y))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{palette[i % len(palette)]}" '
                   f'stroke-width="1.5"/>')
    for x, y, shape in markers:
        if shape == "square":
            out.append(f'<rect x="{X(x) - 5:.2f}" y="{Y(y) - 5:.2f}" width="10" height="10" '
                       f'fill="black"/>')
        else:
            out.append(f'<circle cx="{X(x):.2f}" cy="{Y(y):.2f}" r="5" fill="white" '
                       f'stroke="black" stroke-width="1.5"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _nice_step(span):
    raw = span / 6 if span > 0 else 1.0
    mag = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 5, 10):
        if raw <= m * mag:
            return m * mag
    return 10 * mag


def _esc(s):
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(repr(float(v)) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


# --- commands --------------------------------------------------------------

def cmd_limit(cfg: RunConfig) -> list:
    H = cfg["geometry"]["H"]
    L = cfg["limit"]
    etas = np.linspace(-math.pi, math.pi, L["eta_samples"])
    vals = np.array([[e.value for e in limit_eigenvalues(H, float(x), L["bands"])] for x in etas])
    lam_max = float(L["lambda_max"]) if L["lambda_max"].strip() else float(vals.max())
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ExceptionalHWarning)
        nodes = find_nodes(H, lam_max)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    table = [{"eta_star": n.eta_star, "lambda_star": n.lambda_star,
              "branches": [list(b) for b in n.branches], "status": n.status,
              "rule": n.rule, "proven": n.proven} for n in nodes]
    files = []
    if "csv" in cfg.formats:
        files.append(_write(cfg, "limit_dispersion.csv",
                            _csv(["eta"] + [f"lambda{p + 1}" for p in range(L["bands"])],
                                 np.column_stack([etas, vals]))))
    if "json" in cfg.formats:
        files.append(_write(cfg, "limit_nodes.json", _json({"H": H, "nodes": table})))
    if "svg" in cfg.formats:
        marks = []
        for n in nodes:
            shape = "circle" if n.status == "opens_gap" else "square"
            marks.append((n.eta_star, n.lambda_star, shape))
            if abs(n.eta_star - math.pi) < 1e-12:
                marks.append((-math.pi, n.lambda_star, shape))
        files.append(_write(cfg, "limit_dispersion.svg",
                            svg_dispersion(etas, list(vals.T), f"limit curves, H={H:g}",
                                           markers=marks)))
    for n in nodes:
        print(f"{n.label()}  {n.status}{'  (proven)' if n.proven else ''}")
    return files


def _constants(cfg: RunConfig, spec_hole, H):
    c = cfg["cell_constants"]
    T = float(c["T"]) if c["T"].strip() else default_truncation(spec_hole, H)
    strip = StripSpec(H, spec_hole, T)
    return compute_cell_constants(strip, c["target_h"], c["grading"],
                                  cross_tol=c["cross_tolerance"])


def _symmetry_note(hole, H):
    d = mirror_symmetry_defect(hole, H)
    if d > 10 * hole.tolerance:
        print(f"warning: hole is not mirror symmetric about xi_2 = H/2 (defect {d:.3g}); "
              "the gap-opening results assume a symmetric hole", file=sys.stderr)


def cmd_cell_constants(cfg: RunConfig) -> list:
    hole = hole_from(cfg)
    if hole is None:
        raise ConfigError("cell-constants needs a hole")
    H = cfg["geometry"]["H"]
    _symmetry_note(hole, H)
    cc = _constants(cfg, hole, H)
    files = []
    if "json" in cfg.formats or not cfg.formats:
        files.append(_write(cfg, "cell_constants.json", cc.to_json() + "\n"))
    d = cc.diagnostics
    print(f"m1={cc.m1:.8g} m2={cc.m2:.3g} M_Xi={cc.M_Xi:.8g} |omega|={cc.area_omega:.8g} "
          f"T={d['T']:.4g} decay={d['decay_check']['W1_0']['rate']:.3g}")
    if not d["decay_check"]["W1_0"]["ok"]:
        raise VerificationFailure("decay check failed; enlarge T or refine the strip mesh")
    return files


def _sweep(cfg: RunConfig):
    spec = cell_spec(cfg)
    s, f = cfg["sweep"], cfg["fem"]
    return spec, sweep(spec, s["eta_samples"], s["bands"], cell_h(cfg, spec),
                       grading=f["grading"], psi_max=s["psi_max"],
                       window_samples=s["window_samples"], workers=s["workers"],
                       tol=f["tolerance"], dense_ceiling=f["dense_ceiling"])


def _dispersion_files(cfg, ds, gaps=(), stem="dispersion"):
    files = []
    if "csv" in cfg.formats:
        path = os.path.join(cfg.out, f"{stem}.csv")
        os.makedirs(cfg.out, exist_ok=True)
        ds.to_csv(path)
        files.append(path)
    if "json" in cfg.formats:
        files.append(_write(cfg, f"{stem}.json", _json(ds.to_dict())))
    if "svg" in cfg.formats:
        title = f"H={ds.H:g}, eps={ds.epsilon:g}" if ds.epsilon else f"H={ds.H:g}, unperforated"
        files.append(_write(cfg, f"{stem}.svg",
                            svg_dispersion(ds.eta_grid, list(ds.values.T), title, gaps=gaps)))
    return files


def cmd_dispersion(cfg: RunConfig) -> list:
    _, ds = _sweep(cfg)
    print(f"{len(ds.eta_grid)} eta points, {ds.mesh_meta['dofs']} DOFs, "
          f"symmetry defect {ds.symmetry_defect():.1e}")
    return _dispersion_files(cfg, ds)


def cmd_gaps(cfg: RunConfig) -> list:
    spec, ds = _sweep(cfg)
    count = cfg["sweep"]["bands"]
    bands, gaps = extract_bands_gaps(ds, count)
    out = {"H": spec.H, "epsilon": spec.epsilon,
           "bands": [vars(b) for b in bands],
           "gaps": [dict(vars(g), width=g.width) for g in gaps]}
    report = None
    if spec.perforated:
        _symmetry_note(spec.hole, spec.H)
        cc = _constants(cfg, spec.hole, spec.H)
        preds, omitted = predicted_gaps(cc, spec.epsilon)
        out["predictions"] = [{"p": p.p, "width_slope": p.width_slope,
                               "predicted_width": p.width,
                               "lower_edge_bound": p.lower_edge_bound,
                               "upper_edge_bound": p.upper_edge_bound} for p in preds]
        out["omitted"] = {str(k): v for k, v in omitted.items()}
        report = compare_asymptotics(ds, cc, preds)
    files = _dispersion_files(cfg, ds, [(g.lower, g.upper) for g in gaps if g.open])
    if "json" in cfg.formats:
        files.append(_write(cfg, "bands_gaps.json", _json(out)))
        if report is not None:
            files.append(_write(cfg, "comparison.json", _json(report)))
    for g in gaps:
        state = "open" if g.open else ("closed (bands overlap)" if g.width < 0 else "closed")
        print(f"gap {g.p}: ({g.lower:.6f}, {g.upper:.6f}) width {g.width:.6f} {state}")
    for p, why in out.get("omitted", {}).items():
        print(f"gap {p}: prediction omitted ({why})")
    return files


def cmd_verify(cfg: RunConfig, only=None) -> list:
    results = acceptance.run(only, acceptance.Context(workers=cfg["sweep"]["workers"]))
    summary = [{"criterion": r.number, "title": r.title, "passed": r.passed,
                "detail": r.detail} for r in results]
    files = []
    if "json" in cfg.formats:
        files.append(_write(cfg, "verify.json", _json(summary)))
    failed = [r.number for r in results if not r.passed]
    if failed:
        raise VerificationFailure(f"criteria failed: {failed}")
    return files


COMMANDS = {
    "limit": cmd_limit,
    "cell-constants": cmd_cell_constants,
    "dispersion": cmd_dispersion,
    "gaps": cmd_gaps,
    "verify": cmd_verify,
}


def _help_defaults() -> str:
    lines = ["configuration keys (INI sections) and defaults:"]
    for sec, keys in SCHEMA.items():
        lines.append(f"  [{sec}]")
        for k, (typ, default, text) in keys.items():
            lines.append(f"    {k + ' =':<20} {default!s:<14} {text}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="perfstrip",
        description="Band gaps of a strip perforated by a string of small holes.",
        epilog=_help_defaults() + "\n\nexit codes: 0 ok, 2 config, 3 mesh/solver, 4 verification",
        formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("config", nargs="?", help="INI file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a configuration key (repeatable)")
    p.add_argument("--only", type=int, action="append",
                   help="verify: run only this criterion (repeatable)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        fn = COMMANDS[args.command]
        files = fn(cfg, args.only) if args.command == "verify" else fn(cfg)
    except (ConfigError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MeshError, SolverError, CapacityError, AssemblyError, SolvabilityError,
            SweepError, DecayError) as exc:
        print(f"mesh/solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (TruncationError, VerificationFailure) as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    for f in files:
        print(f"wrote {f}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
