"""Command-line front end.

Subcommands: ``simulate``, ``invert``, ``roundtrip``, ``check`` and
``example``. Every command writes ``manifest.json`` into its output
directory. Exit codes: 0 success, 2 configuration error, 3 ingestion error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import math
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import grating as gr
from . import io
from .core import Layer, ModeSet
from .errors import ConfigError, IngestionError, MMStripError, NumericalError
from .forward import (
    DEFAULT_BANDWIDTH_RATIO,
    SpectrumGrid,
    WindowFn,
    design_grid,
    quasi_continuous_grid,
    simulate_reflection,
    uniform_grid,
)
from .inverse import ContinuityConfig, InverseConfig, layer_strip

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INGEST = 3
EXIT_NUMERIC = 4

EDGE_FRACTION = 0.02

# published peak reflectivities (%) and reconstruction bounds for the built-in example
SEC5_PEAKS = {(0, 0): 99.6, (1, 1): 99.6, (2, 2): 97.0, (3, 3): 83.0, (0, 3): 28.3}
SEC5_PEAK_TOL = 0.5
SEC5_BOUNDS = {"dn_ac": 4e-6, "dn_dc": 6e-5, "dtheta_dx": 300.0}


def example_config(name: str = "sec5") -> dict:
    """Full configuration of a built-in example."""
    if name != "sec5":
        raise ConfigError(f"unknown example {name!r}")
    n = gr.SEC5_N
    n_layers = int(round(gr.SEC5_LENGTH / gr.SEC5_DX))
    return {
        "schema_version": io.SCHEMA_VERSION,
        "description": "four-mode chirped fiber grating, 20 mm",
        "modes": {"n": list(n), "period": gr.SEC5_LAMBDA0 / (2 * gr.sec5_n0()), "lambda0": gr.SEC5_LAMBDA0},
        "structure": {"kind": "example", "name": "sec5", "dx": gr.SEC5_DX},
        "grid": {"rule": "quasi-continuous", "n0": gr.sec5_n0(), "oversample": 8},
        "forward": {"method": "split", "with_transmission": True},
        "inverse": {
            "situation": "c",
            "n_layers": n_layers,
            "window": {"kind": "rect"},
            "index_correction": True,
            "n0": gr.sec5_n0(),
            "rho_sign": "negative",
        },
    }


# --- configuration to objects ----------------------------------------------


@dataclass
class Structure:
    kind: str
    modes: ModeSet
    dx: float
    layers: list | None = None
    profile: gr.GratingProfile | None = None

    @property
    def n_layers(self) -> int:
        return self.profile.n_samples if self.profile is not None else len(self.layers)

    @property
    def eta(self):
        return None if self.profile is None else self.profile.eta


def _eta_of(obj, p: int) -> np.ndarray:
    if obj is None:
        raise ConfigError("structure/eta: required for profile structures")
    if isinstance(obj, str):
        try:
            return gr.eta_from_library(obj)
        except KeyError as exc:
            raise ConfigError(f"structure/eta: {exc.args[0]}") from None
    if isinstance(obj, dict):
        return io.eta_from_json_obj(obj)
    eta = np.asarray(obj, dtype=float)
    if eta.shape != (p, p):
        raise ConfigError(f"structure/eta: expected a {p}x{p} matrix")
    return eta


def _need_dx(s: dict) -> float:
    if "dx" not in s:
        raise ConfigError("structure/dx: required")
    return float(s["dx"])


def build_structure(cfg: dict) -> Structure | None:
    s = cfg.get("structure")
    if s is None:
        return None
    kind = s["kind"]
    try:
        if kind == "example":
            prof = gr.example_profile_sec5(
                float(s.get("dx", gr.SEC5_DX)),
                chirp_slope=float(s.get("chirp_slope", gr.SEC5_CHIRP)),
                dc_phase=float(s.get("dc_phase", 0.0)),
            )
            return Structure(kind, prof.modes, prof.dx, profile=prof)
        if "modes" not in cfg:
            raise ConfigError("modes: required unless the structure is a built-in example")
        modes = io.modes_from_config(cfg["modes"])
        dx = _need_dx(s)
        p = modes.p_count
        if kind == "layers":
            layers = []
            for j, item in enumerate(s.get("layers", [])):
                rho = io.cmatrix(item["rho"], f"structure/layers/{j}/rho")
                phi = io.cmatrix(item["phi"], f"structure/layers/{j}/phi") if "phi" in item else np.eye(p)
                if rho.shape != (p, p) or phi.shape != (p, p):
                    raise ConfigError(f"structure/layers/{j}: matrices must be {p}x{p}")
                layers.append(Layer(phi, rho, dx))
            return Structure(kind, modes, dx, layers=layers)
        dn_ac = np.asarray(s.get("dn_ac", []), dtype=float)
        n = dn_ac.size
        x = np.asarray(s["x"], dtype=float) if "x" in s else (np.arange(n) + 0.5) * dx
        dn_dc = np.asarray(s.get("dn_dc", np.zeros(n)), dtype=float)
        rate = np.asarray(s.get("dtheta_dx", np.zeros(n)), dtype=float)
        if not (x.size == dn_dc.size == rate.size == n):
            raise ConfigError("structure: x, dn_ac, dn_dc and dtheta_dx must have equal lengths")
        prof = gr.GratingProfile(x, dn_ac, dn_dc, rate, _eta_of(s.get("eta"), p), modes, dx)
        return Structure(kind, modes, dx, profile=prof)
    except ConfigError:
        raise
    except (ValueError, MMStripError) as exc:
        raise ConfigError(f"structure: {exc}") from None


def _modes(cfg: dict, structure: Structure | None) -> ModeSet:
    if structure is not None:
        return structure.modes
    if "modes" not in cfg:
        raise ConfigError("modes: required")
    return io.modes_from_config(cfg["modes"])


def build_grid(cfg: dict, modes: ModeSet, dx: float, n_layers: int) -> tuple[np.ndarray, dict]:
    g = dict(cfg.get("grid", {}))
    profile_like = cfg.get("structure", {}).get("kind") in ("profile", "example")
    rule = g.get("rule", "explicit" if "omega_max" in g else ("quasi-continuous" if profile_like else "design"))
    if rule == "explicit":
        if "omega_max" not in g or "m" not in g:
            raise ConfigError("grid: explicit rule needs omega_max and m")
        om = uniform_grid(float(g["omega_max"]), int(g["m"]), float(g.get("center", 0.0)))
    elif rule == "design":
        om = design_grid(modes, dx, n_layers, ratio=float(g.get("ratio", DEFAULT_BANDWIDTH_RATIO)))
    else:
        n0 = float(g.get("n0", 0.5 * (float(np.min(modes.n)) + float(np.max(modes.n)))))
        om = quasi_continuous_grid(n0, dx, n_layers, c=modes.c, oversample=int(g.get("oversample", 8)))
    info = {"rule": rule, "m": int(om.size - 1), "points": int(om.size), "omega_max": 0.5 * float(om[-1] - om[0]),
            "center": 0.5 * float(om[-1] + om[0])}
    return om, info


def build_inverse(cfg: dict, structure: Structure | None, args=None) -> InverseConfig:
    inv = dict(cfg.get("inverse", {}))
    if args is not None:
        if getattr(args, "window", None):
            inv["window"] = {"kind": args.window}
        if getattr(args, "situation", None):
            inv["situation"] = args.situation
        if getattr(args, "no_index_correction", False):
            inv["index_correction"] = False
    n_layers = inv.get("n_layers", structure.n_layers if structure is not None else None)
    dx = inv.get("dx", structure.dx if structure is not None else None)
    if n_layers is None or dx is None:
        raise ConfigError("inverse: n_layers and dx are required when the config has no structure")
    w = inv.get("window", {})
    cont = inv.get("continuity", {})
    try:
        return InverseConfig(
            n_layers=int(n_layers),
            dx=float(dx),
            situation=inv.get("situation", "c"),
            window=WindowFn(w.get("kind", "raised-cosine"), float(w.get("alpha", 0.16))),
            index_correction=bool(inv.get("index_correction", False)),
            n0=inv.get("n0"),
            continuity=ContinuityConfig(**cont),
            rho_sign=inv.get("rho_sign", "auto"),
        )
    except ValueError as exc:
        raise ConfigError(f"inverse: {exc}") from None


# --- engine wrappers -------------------------------------------------------


def _simulate(structure: Structure, cfg: dict, omegas, threads) -> SpectrumGrid:
    fwd = cfg.get("forward", {})
    with_t = bool(fwd.get("with_transmission", True))
    if structure.profile is not None:
        return gr.simulate_profile(structure.profile, omegas, method=fwd.get("method", "split"),
                                   with_transmission=with_t, threads=threads)
    return simulate_reflection(structure.layers, structure.modes, omegas, with_transmission=with_t, threads=threads)


def _recovered_x(structure: Structure | None, cfg: dict, n: int, dx: float):
    """Positions of the recovered reflectors and whether codirectional sections need aligning."""
    layered = cfg.get("forward", {}).get("method", "split") == "layered"
    if structure is not None and structure.profile is not None:
        x_first = float(structure.profile.x[0])
        if layered:
            return x_first + np.arange(n) * dx, False
        return x_first - 0.5 * dx + np.arange(n) * dx, True
    return np.arange(n) * dx, not layered


def _invert(spec: SpectrumGrid, cfg: dict, structure: Structure | None, modes: ModeSet, args):
    icfg = build_inverse(cfg, structure, args)
    layers, diag = layer_strip(spec, icfg, modes)
    fit = None
    x, align = _recovered_x(structure, cfg, len(layers), icfg.dx)
    eta = structure.eta if structure is not None else None
    if eta is None and cfg.get("structure", {}).get("eta") is not None:
        eta = _eta_of(cfg["structure"]["eta"], modes.p_count)
    if eta is not None:
        inv = cfg.get("inverse", {})
        fit = gr.profile_from_layers(layers, eta, modes, x=x, fit_dc=inv.get("fit_dc", True),
                                     fit_chirp=inv.get("fit_chirp", True), align_sections=align)
    return icfg, layers, diag, fit, x


def _interior(n: int) -> slice:
    e = int(round(EDGE_FRACTION * n))
    return slice(e, n - e) if n - 2 * e > 0 else slice(0, n)


def profile_errors(rec: dict, true: dict) -> dict:
    """Max absolute differences over the interior rows of two profile tables."""
    n = len(rec["x"])
    sl = _interior(n)
    out = {"excluded_each_end": sl.start, "rows_compared": sl.stop - sl.start}
    for key in ("dn_ac", "dn_dc", "dtheta_dx"):
        d = np.abs(np.asarray(rec[key])[sl] - np.asarray(true[key])[sl])
        out[key] = float(np.max(d)) if d.size else 0.0
    return out


def layer_errors(rec, true) -> dict:
    rho = [float(np.max(np.abs(a.rho - b.rho))) for a, b in zip(rec, true)]
    phi = [float(np.max(np.abs(a.phi - b.phi))) for a, b in zip(rec, true)]
    return {"rho": max(rho, default=0.0), "phi": max(phi, default=0.0), "per_layer_rho": rho, "per_layer_phi": phi}


def _true_profile_on(structure: Structure, x) -> dict:
    p = structure.profile
    return {
        "x": np.asarray(x),
        "dn_ac": np.interp(x, p.x, p.dn_ac),
        "dn_dc": np.interp(x, p.x, p.dn_dc),
        "dtheta_dx": np.interp(x, p.x, p.theta_rate),
    }


# --- manifest --------------------------------------------------------------


def _manifest(command: str, cfg: dict | None, **extra) -> dict:
    m = {
        "command": command,
        "config_hash": io.config_hash(cfg) if cfg is not None else None,
        "versions": {"mmstrip": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "tolerances": {"reciprocity_ingest": io.RECIPROCITY_TOL, "uniform_grid_rtol": io.UNIFORM_RTOL},
    }
    m.update(extra)
    return m


def _out_dir(path) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load(args) -> dict:
    if getattr(args, "example", None):
        return example_config(args.example)
    if not getattr(args, "config", None):
        raise ConfigError("--config or --example is required")
    return io.load_config(args.config)


def _threads(args, cfg):
    return getattr(args, "threads", None) or cfg.get("threads")


def _write_spectrum(out: Path, spec: SpectrumGrid) -> list[str]:
    io.write_spectrum_csv(out / "spectrum.csv", spec)
    files = ["spectrum.csv"]
    if spec.t is not None:
        io.write_transmission_csv(out / "transmission.csv", spec)
        files.append("transmission.csv")
    return files


def _defect_summary(spec: SpectrumGrid) -> dict:
    d = spec.physical_defects()
    return {k: (float(np.nanmax(v)) if np.any(np.isfinite(v)) else None) for k, v in d.items()}


def _write_inversion(out: Path, layers, x, diag, fit) -> list[str]:
    io.write_layers_csv(out / "layers.csv", layers, x)
    io.write_json(out / "diagnostics.json", diag.to_dict())
    files = ["layers.csv", "diagnostics.json"]
    if fit is not None:
        p = fit.profile
        io.write_profile_csv(out / "profile.csv", p.x, p.dn_ac, p.dn_dc, p.theta_rate)
        io.write_eta_json(out / "eta.json", p.eta)
        files += ["profile.csv", "eta.json"]
    return files


# --- commands --------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load(args)
    structure = build_structure(cfg)
    if structure is None:
        raise ConfigError("structure: required for simulate")
    t0 = time.perf_counter()
    omegas, grid = build_grid(cfg, structure.modes, structure.dx, structure.n_layers)
    spec = _simulate(structure, cfg, omegas, _threads(args, cfg))
    t_sim = time.perf_counter() - t0
    out = _out_dir(args.out_dir)
    files = _write_spectrum(out, spec)
    summary = {"physical_defects": _defect_summary(spec)}
    if structure.kind == "example":
        summary["peak_reflectivity_percent"] = {f"R{p + 1}{q + 1}": 100 * v
                                                for (p, q), v in gr.peak_reflectivities(spec).items()}
    io.write_json(out / "manifest.json", _manifest("simulate", cfg, grid=grid, window=None,
                                                   timings={"simulate_s": t_sim}, residuals=summary, outputs=files))
    print(f"wrote {', '.join(files)} to {out}")
    return EXIT_OK


def cmd_invert(args) -> int:
    cfg = _load(args)
    structure = build_structure(cfg)
    modes = _modes(cfg, structure)
    if not args.spectrum:
        raise ConfigError("--spectrum is required")
    spec = io.read_spectrum_csv(args.spectrum, modes)
    t0 = time.perf_counter()
    icfg, layers, diag, fit, x = _invert(spec, cfg, structure, modes, args)
    t_inv = time.perf_counter() - t0
    out = _out_dir(args.out_dir)
    files = _write_inversion(out, layers, x, diag, fit)
    grid = {"m": spec.m - 1, "points": spec.m, "omega_max": spec.omega_max,
            "center": 0.5 * float(spec.omegas[0] + spec.omegas[-1])}
    io.write_json(out / "manifest.json", _manifest(
        "invert", cfg, grid=grid, window=icfg.window.to_dict(), inverse=_inverse_summary(icfg),
        timings={"invert_s": t_inv},
        residuals={"residual_norm": diag.residual_norm, "residual_h0_norm": diag.residual_h0_norm,
                   "flagged_layers": diag.flagged_layers}, outputs=files))
    print(f"wrote {', '.join(files)} to {out}")
    return EXIT_OK


def _inverse_summary(icfg: InverseConfig) -> dict:
    return {"situation": icfg.situation.value, "n_layers": icfg.n_layers, "dx": icfg.dx,
            "index_correction": icfg.index_correction, "n0": icfg.n0, "rho_sign": icfg.rho_sign,
            "continuity": {"enabled": icfg.continuity.enabled,
                           "sv_zero_threshold": icfg.continuity.sv_zero_threshold,
                           "sv_degeneracy_threshold": icfg.continuity.sv_degeneracy_threshold}}


def roundtrip(cfg: dict, out: Path, args=None) -> dict:
    """Simulate then invert; writes both artifact sets and returns the report."""
    structure = build_structure(cfg)
    if structure is None:
        raise ConfigError("structure: required for roundtrip")
    threads = _threads(args, cfg) if args is not None else cfg.get("threads")
    t0 = time.perf_counter()
    omegas, grid = build_grid(cfg, structure.modes, structure.dx, structure.n_layers)
    spec = _simulate(structure, cfg, omegas, threads)
    t1 = time.perf_counter()
    icfg, layers, diag, fit, x = _invert(spec, cfg, structure, structure.modes, args)
    t2 = time.perf_counter()

    files = _write_spectrum(out, spec)
    files += _write_inversion(out, layers, x, diag, fit)
    report = {"physical_defects": _defect_summary(spec), "flagged_layers": diag.flagged_layers,
              "residual_h0_norm": diag.residual_h0_norm}
    if structure.profile is not None:
        truth = _true_profile_on(structure, x)
        io.write_profile_csv(out / "profile_true.csv", truth["x"], truth["dn_ac"], truth["dn_dc"],
                             truth["dtheta_dx"])
        files.append("profile_true.csv")
        p = fit.profile
        report["profile_errors"] = profile_errors(
            {"x": p.x, "dn_ac": p.dn_ac, "dn_dc": p.dn_dc, "dtheta_dx": p.theta_rate}, truth)
        report["peak_reflectivity_percent"] = {f"R{a + 1}{b + 1}": 100 * v
                                               for (a, b), v in gr.peak_reflectivities(spec, _pairs(spec)).items()}
    else:
        io.write_layers_csv(out / "layers_true.csv", structure.layers, x)
        files.append("layers_true.csv")
        report["layer_errors"] = layer_errors(layers, structure.layers)
    io.write_json(out / "report.json", report)
    files.append("report.json")
    io.write_json(out / "manifest.json", _manifest(
        "roundtrip", cfg, grid=grid, window=icfg.window.to_dict(), inverse=_inverse_summary(icfg),
        forward=cfg.get("forward", {"method": "split"}),
        timings={"simulate_s": t1 - t0, "invert_s": t2 - t1},
        residuals={k: v for k, v in report.items() if k != "layer_errors"}, outputs=files))
    return report


def _pairs(spec: SpectrumGrid):
    p = spec.p_count
    pairs = [(i, i) for i in range(p)]
    if p == 4:
        pairs.append((0, 3))
    return tuple(pairs)


def _print_report(report: dict) -> None:
    if "profile_errors" in report:
        e = report["profile_errors"]
        print(f"max |dn_ac error|     {e['dn_ac']:.3e}")
        print(f"max |dn_dc error|     {e['dn_dc']:.3e}")
        print(f"max |dtheta/dx error| {e['dtheta_dx']:.3e} 1/m")
    if "layer_errors" in report:
        e = report["layer_errors"]
        print(f"max |rho error| {e['rho']:.3e}")
        print(f"max |phi error| {e['phi']:.3e}")
    print(f"flagged layers: {report['flagged_layers']}")


def cmd_roundtrip(args) -> int:
    cfg = _load(args)
    report = roundtrip(cfg, _out_dir(args.out_dir), args)
    _print_report(report)
    return EXIT_OK


def cmd_check(args) -> int:
    spec = io.read_spectrum_csv(args.spectrum, transmission_path=args.transmission)
    d = spec.physical_defects()
    report = {
        "points": spec.m,
        "P": spec.p_count,
        "reciprocity_defect": float(np.max(d["reciprocity"])),
        "unitarity_defect": float(np.max(d["unitarity"])) if spec.t is not None else None,
        "contraction_defect": float(np.max(d["contraction"])),
        "max_norm_r": float(np.max(d["norm_r"])),
    }
    tol = args.tolerance
    report["passes"] = bool(report["reciprocity_defect"] < tol and report["contraction_defect"] == 0.0
                            and (report["unitarity_defect"] is None or report["unitarity_defect"] < tol))
    for k, v in report.items():
        print(f"{k}: {v}")
    if args.out_dir:
        out = _out_dir(args.out_dir)
        io.write_json(out / "check.json", report)
        io.write_json(out / "manifest.json", _manifest("check", None, grid={"points": spec.m},
                                                       tolerances={"defect": tol}, residuals=report,
                                                       outputs=["check.json"]))
    return EXIT_OK


def acceptance_table(report: dict) -> list[tuple[str, float, str, bool]]:
    rows = []
    peaks = report.get("peak_reflectivity_percent", {})
    for (p, q), want in SEC5_PEAKS.items():
        got = peaks.get(f"R{p + 1}{q + 1}", math.nan)
        rows.append((f"peak |R{p + 1}{q + 1}| (%)", got, f"{want} +- {SEC5_PEAK_TOL}",
                     abs(got - want) <= SEC5_PEAK_TOL))
    errs = report.get("profile_errors", {})
    for key, bound in SEC5_BOUNDS.items():
        got = errs.get(key, math.nan)
        rows.append((f"max {key} error", got, f"< {bound:g}", got < bound))
    return rows


def cmd_example(args) -> int:
    cfg = example_config(args.name)
    out = _out_dir(args.out_dir)
    io.write_json(out / "config.json", cfg)
    report = roundtrip(copy.deepcopy(cfg), out, args)
    ok = True
    print(f"{'quantity':<24}{'value':>14}  target")
    for name, got, target, passed in acceptance_table(report):
        ok &= passed
        print(f"{name:<24}{got:>14.6g}  {target:<16}{'PASS' if passed else 'FAIL'}")
    print("all targets met" if ok else "some targets missed; see report.json")
    return EXIT_OK


# --- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mmstrip", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, spectrum=False):
        p.add_argument("--config", help="JSON configuration (schema_version 1)")
        p.add_argument("--example", choices=["sec5"], help="use a built-in configuration instead of --config")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--threads", type=int, default=None)
        if spectrum:
            p.add_argument("--spectrum", required=True)

    def inv_flags(p):
        p.add_argument("--window", choices=["rect", "raised-cosine", "gaussian"])
        p.add_argument("--situation", choices=["a", "b", "c"])
        p.add_argument("--no-index-correction", action="store_true")

    p = sub.add_parser("simulate", help="forward-simulate a structure")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("invert", help="layer-strip a spectrum file")
    common(p, spectrum=True)
    inv_flags(p)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("roundtrip", help="simulate, invert and report errors")
    common(p)
    inv_flags(p)
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("check", help="physicality report for a spectrum file")
    p.add_argument("--spectrum", required=True)
    p.add_argument("--transmission", help="optional transmission CSV for the unitarity check")
    p.add_argument("--out-dir")
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("example", help="run a built-in example end to end")
    p.add_argument("name", nargs="?", default="sec5", choices=["sec5"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_example, window=None, situation=None, no_index_correction=False)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MMStripError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
