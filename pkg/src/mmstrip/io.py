"""File formats: spectrum/layer/profile CSV, eta JSON and run configuration."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from .core import C_LIGHT, Layer, ModeSet
from .errors import ConfigError, IngestionError, MMStripError
from .forward import SpectrumGrid

SCHEMA_VERSION = 1
RECIPROCITY_TOL = 1e-8
UNIFORM_RTOL = 1e-9


def _fmt(v: float) -> str:
    return "%.17g" % v


def _pairs(p: int):
    return [(a, b) for a in range(p) for b in range(p)]


# --- spectra ---------------------------------------------------------------


def _matrix_header(prefix: str, p: int) -> list[str]:
    cols = []
    for a, b in _pairs(p):
        cols += [f"Re_{prefix}_{a + 1}_{b + 1}", f"Im_{prefix}_{a + 1}_{b + 1}"]
    return cols


def _write_matrix_csv(path, omegas, mats, prefix):
    p = mats.shape[1]
    flat = mats.reshape(mats.shape[0], p * p)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["omega"] + _matrix_header(prefix, p)) + "\n")
        for w, row in zip(omegas, flat):
            parts = [_fmt(w)]
            for z in row:
                parts.append(_fmt(z.real))
                parts.append(_fmt(z.imag))
            fh.write(",".join(parts) + "\n")


def write_spectrum_csv(path, spec: SpectrumGrid) -> None:
    _write_matrix_csv(path, spec.omegas, spec.r, "R")


def write_transmission_csv(path, spec: SpectrumGrid) -> None:
    if spec.t is None:
        raise ValueError("spectrum has no transmission block")
    _write_matrix_csv(path, spec.omegas, spec.t, "T")


def _read_matrix_csv(path, prefix):
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
    except FileNotFoundError:
        raise IngestionError(f"{path}: file not found") from None
    except StopIteration:
        raise IngestionError(f"{path}: empty file") from None
    ncol = len(header) - 1
    p = int(round(math.sqrt(ncol / 2))) if ncol > 0 else 0
    if p < 1 or 2 * p * p != ncol or header != ["omega"] + _matrix_header(prefix, p):
        raise IngestionError(f"{path}: header does not match omega,Re_{prefix}_1_1,Im_{prefix}_1_1,...")
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    try:
        data = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise IngestionError(f"{path}: non-numeric entry ({exc})") from None
    if data.shape[1] != ncol + 1:
        raise IngestionError(f"{path}: ragged rows")
    if not np.all(np.isfinite(data)):
        raise IngestionError(f"{path}: non-finite values")
    omegas = data[:, 0]
    vals = data[:, 1::2] + 1j * data[:, 2::2]
    return omegas, vals.reshape(-1, p, p)


def _check_uniform(path, omegas):
    if omegas.size < 2:
        return
    d = np.diff(omegas)
    if np.any(d <= 0) or np.max(np.abs(d - d.mean())) > UNIFORM_RTOL * max(abs(d.mean()), 1e-300) * 10:
        raise IngestionError(f"{path}: frequency grid is not uniform and increasing")


def read_spectrum_csv(path, modes: ModeSet | None = None, *, transmission_path=None,
                      reciprocity_tol: float = RECIPROCITY_TOL) -> SpectrumGrid:
    """Read and validate a spectrum file (uniform grid, finite, reciprocal)."""
    omegas, r = _read_matrix_csv(path, "R")
    _check_uniform(path, omegas)
    if modes is not None and modes.p_count != r.shape[1]:
        raise IngestionError(f"{path}: file has P={r.shape[1]}, configuration has P={modes.p_count}")
    asym = float(np.max(np.abs(r - np.swapaxes(r, -1, -2))))
    scale = max(1.0, float(np.max(np.abs(r))))
    if asym > reciprocity_tol * scale:
        raise IngestionError(f"{path}: reciprocity violation, max |R - R^T| = {asym:.3g}")
    t = None
    if transmission_path is not None:
        om_t, t = _read_matrix_csv(transmission_path, "T")
        if om_t.shape != omegas.shape or np.max(np.abs(om_t - omegas)) > 0:
            raise IngestionError(f"{transmission_path}: grid differs from the reflection file")
        if t.shape != r.shape:
            raise IngestionError(f"{transmission_path}: matrix size differs from the reflection file")
    return SpectrumGrid(omegas, r, modes, None, t, {"source": str(path)})


# --- layers and profiles ---------------------------------------------------


def write_layers_csv(path, layers, x=None) -> None:
    layers = list(layers)
    p = layers[0].p_count if layers else 0
    if x is None:
        x = [j * (layers[j].dx if layers else 0.0) for j in range(len(layers))]
    cols = ["j", "x"]
    for a, b in _pairs(p):
        cols += [f"Re_rho_{a + 1}_{b + 1}", f"Im_rho_{a + 1}_{b + 1}"]
    for a, b in _pairs(p):
        cols += [f"Re_phi_{a + 1}_{b + 1}", f"Im_phi_{a + 1}_{b + 1}"]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for j, (layer, xj) in enumerate(zip(layers, x)):
            parts = [str(j), _fmt(xj)]
            for m in (layer.rho, layer.phi):
                for z in m.reshape(-1):
                    parts += [_fmt(z.real), _fmt(z.imag)]
            fh.write(",".join(parts) + "\n")


def read_layers_csv(path, dx: float | None = None):
    """Returns ``(layers, x)``; ``dx`` defaults to the spacing of the ``x`` column."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
    except (FileNotFoundError, StopIteration):
        raise IngestionError(f"{path}: missing or empty layers file") from None
    ncol = len(header) - 2
    p = int(round(math.sqrt(ncol / 4))) if ncol > 0 else 0
    if p < 1 or 4 * p * p != ncol or header[:2] != ["j", "x"]:
        raise IngestionError(f"{path}: unexpected layers header")
    data = np.array([[float(v) for v in r] for r in rows])
    x = data[:, 1]
    if dx is None:
        dx = float(x[1] - x[0]) if x.size > 1 else 1.0
    layers = []
    for row in data:
        v = row[2:]
        rho = (v[0 : 2 * p * p : 2] + 1j * v[1 : 2 * p * p : 2]).reshape(p, p)
        phi = (v[2 * p * p :: 2] + 1j * v[2 * p * p + 1 :: 2]).reshape(p, p)
        try:
            layers.append(Layer(phi, rho, dx))
        except MMStripError as exc:
            raise IngestionError(f"{path}: invalid layer {int(row[0])}: {exc}") from None
    return layers, x


def write_profile_csv(path, x, dn_ac, dn_dc, dtheta_dx) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("x,dn_ac,dn_dc,dtheta_dx\n")
        for row in zip(x, dn_ac, dn_dc, dtheta_dx):
            fh.write(",".join(_fmt(float(v)) for v in row) + "\n")


def read_profile_csv(path) -> dict:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
    except (FileNotFoundError, StopIteration):
        raise IngestionError(f"{path}: missing or empty profile file") from None
    if header != ["x", "dn_ac", "dn_dc", "dtheta_dx"]:
        raise IngestionError(f"{path}: header must be x,dn_ac,dn_dc,dtheta_dx")
    data = np.array([[float(v) for v in r] for r in rows])
    return {"x": data[:, 0], "dn_ac": data[:, 1], "dn_dc": data[:, 2], "dtheta_dx": data[:, 3]}


def write_eta_json(path, eta) -> None:
    eta = np.asarray(eta, dtype=float)
    write_json(path, {"P": int(eta.shape[0]), "values": [float(v) for v in eta.reshape(-1)], "units": "1/m"})


def eta_from_json_obj(obj) -> np.ndarray:
    p = int(obj["P"])
    vals = np.asarray(obj["values"], dtype=float)
    if vals.size != p * p:
        raise ConfigError(f"eta: expected {p * p} values, got {vals.size}")
    return vals.reshape(p, p)


def read_eta_json(path) -> np.ndarray:
    with open(path) as fh:
        return eta_from_json_obj(json.load(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- configuration ---------------------------------------------------------

_CMATRIX = {
    "oneOf": [
        {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        {
            "type": "object",
            "properties": {
                "re": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "im": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
            },
            "required": ["re"],
            "additionalProperties": False,
        },
    ]
}

_NUM_ARRAY = {"type": "array", "items": {"type": "number"}}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["schema_version"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "description": {"type": "string"},
        "example": {"enum": ["sec5"]},
        "modes": {
            "type": "object",
            "required": ["n"],
            "additionalProperties": False,
            "properties": {
                "n": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "period": {"type": "number", "minimum": 0},
                "c": {"type": "number", "exclusiveMinimum": 0},
                "omega_ref": {"type": "number"},
                "lambda0": {"type": "number", "exclusiveMinimum": 0},
                "loss": {"oneOf": [{"type": "number", "minimum": 0}, {"type": "array", "items": {"type": "number", "minimum": 0}}]},
            },
        },
        "structure": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["layers", "profile", "example"]},
                "dx": {"type": "number", "exclusiveMinimum": 0},
                "layers": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "properties": {"rho": _CMATRIX, "phi": _CMATRIX},
                        "required": ["rho"],
                        "additionalProperties": False,
                    },
                },
                "x": _NUM_ARRAY,
                "dn_ac": _NUM_ARRAY,
                "dn_dc": _NUM_ARRAY,
                "dtheta_dx": _NUM_ARRAY,
                "eta": {
                    "oneOf": [
                        {"type": "string"},
                        {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                        {
                            "type": "object",
                            "required": ["P", "values"],
                            "properties": {"P": {"type": "integer", "minimum": 1}, "values": _NUM_ARRAY,
                                           "units": {"type": "string"}},
                        },
                    ]
                },
                "name": {"enum": ["sec5"]},
                "chirp_slope": {"type": "number"},
                "dc_phase": {"type": "number"},
            },
            "additionalProperties": False,
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rule": {"enum": ["explicit", "design", "quasi-continuous"]},
                "omega_max": {"type": "number", "exclusiveMinimum": 0},
                "m": {"type": "integer", "minimum": 1},
                "center": {"type": "number"},
                "ratio": {"type": "number", "exclusiveMinimum": 0},
                "n0": {"type": "number", "exclusiveMinimum": 0},
                "oversample": {"type": "integer", "minimum": 1},
            },
        },
        "forward": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["layered", "split", "exact"]},
                "with_transmission": {"type": "boolean"},
            },
        },
        "inverse": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "situation": {"enum": ["a", "b", "c", "A", "B", "C"]},
                "n_layers": {"type": "integer", "minimum": 1},
                "dx": {"type": "number", "exclusiveMinimum": 0},
                "window": {
                    "type": "object",
                    "properties": {"kind": {"enum": ["rect", "raised-cosine", "gaussian"]},
                                   "alpha": {"type": "number", "exclusiveMinimum": 0}},
                    "additionalProperties": False,
                },
                "index_correction": {"type": "boolean"},
                "n0": {"type": "number", "exclusiveMinimum": 0},
                "rho_sign": {"enum": ["auto", "positive", "negative"]},
                "continuity": {
                    "type": "object",
                    "properties": {
                        "enabled": {"type": "boolean"},
                        "sv_zero_threshold": {"type": "number", "exclusiveMinimum": 0},
                        "sv_degeneracy_threshold": {"type": "number", "exclusiveMinimum": 0},
                    },
                    "additionalProperties": False,
                },
                "fit_dc": {"type": "boolean"},
                "fit_chirp": {"type": "boolean"},
                "modes": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            },
        },
        "threads": {"type": "integer", "minimum": 1},
    },
}


def _line_of(text: str, path) -> str:
    """Best-effort line number of the last key in a JSON path."""
    keys = [k for k in path if isinstance(k, str)]
    if not keys:
        return ""
    needle = f'"{keys[-1]}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return f" (line {i})"
    return ""


def parse_config_text(text: str, source: str = "<config>") -> dict:
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for err in errors[:5]:
            where = "/".join(str(p) for p in err.absolute_path) or "<root>"
            msgs.append(f"{source}: {where}{_line_of(text, list(err.absolute_path))}: {err.message}")
        raise ConfigError("\n".join(msgs))
    return cfg


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration ({exc.strerror})") from None
    return parse_config_text(text, str(path))


def config_hash(cfg: dict) -> str:
    canon = json.dumps(_jsonable(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def cmatrix(obj, name: str) -> np.ndarray:
    if isinstance(obj, dict):
        re = np.asarray(obj["re"], dtype=float)
        im = np.asarray(obj.get("im", np.zeros_like(re)), dtype=float)
        if re.shape != im.shape:
            raise ConfigError(f"{name}: re and im parts differ in shape")
        m = re + 1j * im
    else:
        m = np.asarray(obj, dtype=float).astype(complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError(f"{name}: expected a square matrix")
    return m


def cmatrix_obj(m) -> dict:
    m = np.asarray(m, dtype=complex)
    return {"re": m.real.tolist(), "im": m.imag.tolist()}


def modes_from_config(obj: dict) -> ModeSet:
    c = float(obj.get("c", C_LIGHT))
    omega_ref = float(obj.get("omega_ref", 0.0))
    if "lambda0" in obj and "omega_ref" not in obj:
        omega_ref = 2 * math.pi * c / float(obj["lambda0"])
    try:
        return ModeSet(obj["n"], float(obj.get("period", 0.0)), c, omega_ref, obj.get("loss"))
    except ValueError as exc:
        raise ConfigError(f"modes: {exc}") from None
