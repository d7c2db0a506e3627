"""Layer stripping.

Each step reads the front layer's reflection ``h0 = Phi^T rho Phi`` off the
windowed mean of ``R(omega)``, factors it under one of three model
assumptions and removes the layer with the Schur-type update

    R_next = Z K^* (R - Y) (I - Y^* R)^{-1} K^{-1} Z,   Y = Phi^T rho Phi.

Model assumptions:

* ``A``: no codirectional coupling, ``Phi = I`` and ``rho = h0``.
* ``B``: ``rho`` diagonal and nonnegative; ``Phi`` is the Takagi factor with
  the row freedom fixed by continuity from the previous layer.
* ``C``: ``Phi`` symmetric and ``rho`` real (fiber gratings).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import matfact
from .core import EPS_MARGIN, Layer, ModeSet
from .errors import AsymmetricInput, DegenerateWindow, NearSingularPeel, NumericalError, TooStrong
from .forward import SpectrumGrid, WindowFn, trapezoid_weights

COND_PEEL = 1e12


class Situation(str, enum.Enum):
    A = "a"
    B = "b"
    C = "c"

    @classmethod
    def parse(cls, value) -> "Situation":
        if isinstance(value, cls):
            return value
        v = str(value).strip().lower()
        aliases = {
            "a": cls.A, "a_no_codirectional": cls.A,
            "b": cls.B, "b_diagonal_rho": cls.B,
            "c": cls.C, "c_symmetric_phi_psd_rho": cls.C,
        }
        if v not in aliases:
            raise ValueError(f"unknown situation {value!r}")
        return aliases[v]


@dataclass(frozen=True)
class ContinuityConfig:
    enabled: bool = True
    sv_zero_threshold: float = 1e-6
    sv_degeneracy_threshold: float = 1e-4

    def __post_init__(self):
        if not (self.sv_zero_threshold > 0 and self.sv_degeneracy_threshold > 0):
            raise ValueError("continuity thresholds must be positive")


@dataclass(frozen=True)
class InverseConfig:
    """Settings for :func:`layer_strip`.

    ``rho_sign`` applies to situation C: ``"negative"`` expects ``rho`` negative
    semidefinite (a fiber grating), ``"positive"`` positive semidefinite and
    ``"auto"`` decides per layer from the sign of ``Re tr(V^T V)``.
    """

    n_layers: int
    dx: float
    situation: Situation = Situation.C
    window: WindowFn = field(default_factory=WindowFn)
    index_correction: bool = False
    n0: float | None = None
    continuity: ContinuityConfig = field(default_factory=ContinuityConfig)
    rho_sign: str = "auto"

    def __post_init__(self):
        if int(self.n_layers) < 1:
            raise ValueError("n_layers must be >= 1")
        if not self.dx > 0:
            raise ValueError("dx must be positive")
        object.__setattr__(self, "situation", Situation.parse(self.situation))
        if self.rho_sign not in ("auto", "positive", "negative"):
            raise ValueError("rho_sign must be auto, positive or negative")
        if self.index_correction and not (self.n0 and self.n0 > 0):
            raise ValueError("index correction needs a positive nominal index n0")


@dataclass
class LayerReport:
    singular_values: list
    zero: bool = False
    degenerate: bool = False
    sign_flips: int = 0
    permutation: list | None = None
    rho_sign: str | None = None

    @property
    def flagged(self) -> bool:
        return self.zero or self.degenerate


@dataclass
class StripDiagnostics:
    layers: list = field(default_factory=list)
    residual_norm: float = float("nan")
    residual_h0_norm: float = float("nan")
    max_asymmetry: float = 0.0

    @property
    def flagged_layers(self) -> list[int]:
        return [j for j, rep in enumerate(self.layers) if rep.flagged]

    def to_dict(self) -> dict:
        return {
            "residual_norm": self.residual_norm,
            "residual_h0_norm": self.residual_h0_norm,
            "max_asymmetry": self.max_asymmetry,
            "flagged_layers": self.flagged_layers,
            "layers": [
                {
                    "j": j,
                    "singular_values": [float(s) for s in rep.singular_values],
                    "zero": rep.zero,
                    "degenerate": rep.degenerate,
                    "sign_flips": rep.sign_flips,
                    "permutation": rep.permutation,
                    "rho_sign": rep.rho_sign,
                }
                for j, rep in enumerate(self.layers)
            ],
        }


@dataclass
class _Prev:
    """State carried from one layer to the next for continuity."""

    sigma: np.ndarray | None = None
    phi: np.ndarray | None = None
    v: np.ndarray | None = None


# --- Schur step ------------------------------------------------------------


def _schur_update(r: np.ndarray, layer: Layer, modes: ModeSet, omegas: np.ndarray, *, check: bool = True) -> np.ndarray:
    p = r.shape[-1]
    y = layer.upsilon
    eye = np.eye(p)
    a = eye - y.conj() @ r
    if check:
        # ||Y^* R|| <= ||Y|| max ||R||_F; exact conditioning only when the bound is inconclusive
        bound = float(np.linalg.norm(y, 2)) * float(np.max(np.sqrt(np.sum(np.abs(r) ** 2, axis=(-2, -1)))))
        if bound >= 1.0 or (1.0 + bound) / (1.0 - bound) > COND_PEEL:
            cond = np.linalg.cond(a)
            bad = ~np.isfinite(cond) | (cond > COND_PEEL)
            if np.any(bad):
                k = int(np.argmax(bad))
                raise NearSingularPeel(f"I - Y^* R has condition number {cond[k]:.3g}", omega=float(omegas[k]))
    # (R - Y) A^{-1}  ==  solve(A^T, (R - Y)^T)^T
    m = np.swapaxes(np.linalg.solve(np.swapaxes(a, -1, -2), np.swapaxes(r - y, -1, -2)), -1, -2)
    k = layer.k
    kinv = np.linalg.inv(k)
    z = np.exp(-1j * modes.beta(omegas) * layer.dx)
    out = (k.conj() @ m) @ kinv
    return z[:, :, None] * out * z[:, None, :]


def schur_step(spec: SpectrumGrid, layer: Layer, modes: ModeSet | None = None) -> SpectrumGrid:
    """Remove ``layer`` from the front of ``spec``."""
    modes = modes or spec.modes
    if modes is None:
        raise ValueError("schur_step needs the mode set")
    r = _schur_update(spec.r, layer, modes, spec.omegas)
    return SpectrumGrid(spec.omegas, r, modes, spec.window, None, dict(spec.meta))


# --- identification --------------------------------------------------------


def _phase_ref(p: int, situation: Situation, negative: bool) -> np.ndarray:
    if situation is Situation.C and negative:
        return 1j * np.eye(p)
    return np.eye(p, dtype=complex)


def _row_sign_fix(u: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, int]:
    """Flip rows of ``u`` so each has nonnegative real overlap with the matching row of ``ref``."""
    overlap = np.real(np.sum(u * ref.conj(), axis=1))
    flip = overlap < 0
    out = u.copy()
    out[flip] *= -1
    return out, int(np.count_nonzero(flip))


def _sv_blocks(s: np.ndarray, cont: ContinuityConfig):
    """Split indices into a zero block and clusters of (near) equal nonzero values."""
    smax = float(np.max(s)) if s.size else 0.0
    zero_thr = cont.sv_zero_threshold * smax if smax > 0 else np.inf
    zero = [i for i in range(s.size) if s[i] < zero_thr or s[i] == 0.0]
    nz = [i for i in range(s.size) if i not in zero]
    nz.sort(key=lambda i: -s[i])
    clusters: list[list[int]] = []
    for i in nz:
        if clusters and s[clusters[-1][-1]] - s[i] <= cont.sv_degeneracy_threshold * smax:
            clusters[-1].append(i)
        else:
            clusters.append([i])
    return zero, clusters


def _identify_b(h0, cont: ContinuityConfig, prev: _Prev):
    tk = matfact.takagi(h0)
    s, u = tk.sigma.copy(), tk.u.copy()
    p = s.size
    zero, clusters = _sv_blocks(s, cont)
    rep = LayerReport(singular_values=list(s), zero=len(zero) > 0, degenerate=any(len(c) > 1 for c in clusters))

    if not cont.enabled:
        return np.diag(s), u, rep

    if prev.sigma is None:
        # first layer: order rows so the factor is as close to I as possible
        _, col = linear_sum_assignment(-np.abs(u))
        order = np.argsort(col)
    else:
        # match singular values to the previous layer's
        row, col = linear_sum_assignment(np.abs(s[:, None] - prev.sigma[None, :]))
        order = np.empty(p, dtype=int)
        order[col] = row
    s = s[order]
    u = u[order]
    rep.permutation = [int(i) for i in order]

    ref = prev.phi if prev.phi is not None else np.eye(p, dtype=complex)
    zero, clusters = _sv_blocks(s, cont)
    flips = 0
    if zero:
        idx = np.array(zero)
        q = matfact.polar_unitary(ref[idx] @ u[idx].conj().T)
        u[idx] = q @ u[idx]
    for c in clusters:
        idx = np.array(c)
        if len(c) == 1:
            ov = np.real(np.vdot(u[c[0]], ref[c[0]]))
            if ov < 0:
                u[c[0]] *= -1
                flips += 1
        else:
            q = matfact.polar_unitary(np.real(ref[idx] @ u[idx].conj().T)).real
            u[idx] = q @ u[idx]
    rep.sign_flips = flips
    return np.diag(s), u, rep


def _identify_c(h0, cfg: InverseConfig, prev: _Prev):
    tk = matfact.takagi(h0)
    s, v = tk.sigma, tk.u
    p = s.size
    zero, clusters = _sv_blocks(s, cfg.continuity)
    rep = LayerReport(singular_values=list(s), zero=len(zero) > 0, degenerate=any(len(c) > 1 for c in clusters))

    m2 = v.T @ v
    if cfg.rho_sign == "auto":
        negative = float(np.real(np.trace(m2))) < 0
    else:
        negative = cfg.rho_sign == "negative"
    rep.rho_sign = "negative" if negative else "positive"

    if cfg.continuity.enabled:
        ref = prev.v if prev.v is not None else _phase_ref(p, Situation.C, negative)
        v, rep.sign_flips = _row_sign_fix(v, ref)

    u = -1j * v if negative else v
    # Phi = principal sqrt(U^T U) is the nearest-to-identity choice; P = U Phi^{-1} is then real
    fac = matfact.orth_sym_factor(u, special=False)
    pmat, phi = fac.p, fac.phi
    rho = pmat.T @ (s[:, None] * pmat)
    if negative:
        rho = -rho
    rho = 0.5 * (rho + rho.T)
    prev.v = v
    return rho.astype(complex), phi, rep


def identify_layer(h0, cfg: InverseConfig, prev: _Prev | None = None):
    """Factor ``h0 = Phi^T rho Phi`` under the configured situation.

    Returns ``(rho, phi, report)``. ``prev`` carries continuity state and is
    updated in place.
    """
    h0 = matfact.as_square(h0, "h0")
    if np.linalg.norm(h0 - h0.T, 2) > matfact.TAU_SYM * max(1.0, float(np.linalg.norm(h0, 2))):
        raise AsymmetricInput("h0 is not symmetric")
    h0 = 0.5 * (h0 + h0.T)
    nrm = float(np.linalg.norm(h0, 2))
    if nrm >= 1 - EPS_MARGIN:
        raise TooStrong(f"||h0|| = {nrm:.12g} is too close to 1")
    prev = prev if prev is not None else _Prev()
    p = h0.shape[0]
    sit = cfg.situation
    if sit is Situation.A:
        rho, phi = h0, np.eye(p, dtype=complex)
        rep = LayerReport(singular_values=list(np.linalg.svd(h0, compute_uv=False)))
    elif sit is Situation.B:
        rho, phi, rep = _identify_b(h0, cfg.continuity, prev)
        prev.sigma = np.real(np.diag(rho)).copy()
    else:
        rho, phi, rep = _identify_c(h0, cfg, prev)
    prev.phi = phi
    return rho, phi, rep


def index_correction_factors(modes: ModeSet, n0: float) -> np.ndarray:
    n = modes.n
    return (n[:, None] + n[None, :]) / (2.0 * n0)


def layer_strip(spec: SpectrumGrid, cfg: InverseConfig, modes: ModeSet | None = None):
    """Peel ``cfg.n_layers`` layers off ``spec``; returns ``(layers, diagnostics)``."""
    modes = modes or spec.modes
    if modes is None:
        raise ValueError("layer_strip needs the mode set")
    if spec.p_count != modes.p_count:
        raise ValueError("spectrum and mode set disagree on P")
    w = trapezoid_weights(spec.omegas, cfg.window)
    wsum = float(np.sum(w))
    if not wsum > 1e-12 * w.size:
        raise DegenerateWindow("window weights sum to zero")
    w = w / wsum
    corr = index_correction_factors(modes, cfg.n0) if cfg.index_correction else None

    r = spec.r.copy()
    diag = StripDiagnostics()
    prev = _Prev()
    layers: list[Layer] = []
    for j in range(int(cfg.n_layers)):
        try:
            asym = float(np.max(np.abs(r - np.swapaxes(r, -1, -2))))
            diag.max_asymmetry = max(diag.max_asymmetry, asym)
            r = 0.5 * (r + np.swapaxes(r, -1, -2))
            h0 = np.tensordot(w, r, axes=(0, 0))
            if corr is not None:
                h0 = h0 * corr
            rho, phi, rep = identify_layer(h0, cfg, prev)
            layer = Layer(phi, rho, cfg.dx)
            r = _schur_update(r, layer, modes, spec.omegas)
        except NumericalError as exc:
            raise exc.at_layer(j) from exc
        layers.append(layer)
        diag.layers.append(rep)
    diag.residual_norm = float(np.max(np.linalg.norm(r, 2, axis=(-2, -1)))) if r.size else 0.0
    h_res = np.tensordot(w, r, axes=(0, 0))
    diag.residual_h0_norm = float(np.linalg.norm(h_res, 2))
    return layers, diag


def born_leading_edge(h0, modes: ModeSet) -> np.ndarray:
    """Coupling at the entrance from the leading edge ``h(0+)`` of the impulse response.

    ``kappa_pq = conj(-i h0_pq (n_p + n_q) / c)``.
    """
    h0 = np.asarray(h0, dtype=complex)
    n = modes.n
    return np.conj(-1j * h0 * (n[:, None] + n[None, :]) / modes.c)
