"""Quasi-sinusoidal fiber gratings.

The index perturbation ``dn_ac(x) cos(2 pi x / period + theta(x)) + dn_dc(x)``
couples the modes through a fixed overlap matrix ``eta`` (units 1/m):

    kappa(x) = -i (dn_ac / 2) eta
    sigma(x) = dn_dc eta - (dtheta/dx / 2) I
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import C_LIGHT, Layer, ModeSet, kappa_from_reflector, phi_from_sigma, reflector_from_kappa
from .errors import BranchOverflow, UnderdeterminedFit
from .matfact import unitary_log

TAU_PSD = 1e-12
KAPPA_DX_WARN = 0.3

# four-mode example fiber
SEC5_LAMBDA0 = 1.55e-6
SEC5_LENGTH = 20e-3
SEC5_DX = 10e-6
SEC5_N = (1.449, 1.444, 1.439, 1.437)
SEC5_ETA_REL = (
    (0.957, 0.0, 0.0, -0.116),
    (0.0, 0.874, 0.0, 0.0),
    (0.0, 0.0, 0.707, 0.0),
    (-0.116, 0.0, 0.0, 0.491),
)
SEC5_AC_PEAK = 1e-3
SEC5_DC_PEAK = 5e-4
SEC5_DC_FWHM = 7e-3
SEC5_DC_PERIOD = 4e-3
# dtheta/dx slope in 1/m^2; see example_profile_sec5 for why this is not pi/8 * 1e4
SEC5_CHIRP = math.pi / 4 * 1e7
SEC5_CHIRP_LITERAL = math.pi / 8 * 1e4


def _sec5_eta() -> np.ndarray:
    return (2 * math.pi / SEC5_LAMBDA0) * np.array(SEC5_ETA_REL)


ETA_LIBRARY = {"sec5-four-mode": _sec5_eta()}


def eta_from_library(name: str) -> np.ndarray:
    try:
        return ETA_LIBRARY[name].copy()
    except KeyError:
        raise KeyError(f"unknown eta {name!r}; known: {sorted(ETA_LIBRARY)}") from None


def validate_eta(eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if eta.ndim != 2 or eta.shape[0] != eta.shape[1]:
        raise ValueError("eta must be a square matrix")
    if not np.all(np.isfinite(eta)):
        raise ValueError("eta has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(eta))))
    if np.max(np.abs(eta - eta.T)) > 1e-12 * scale:
        raise ValueError("eta must be symmetric")
    if np.min(np.linalg.eigvalsh(eta)) < -TAU_PSD * scale:
        raise ValueError("eta must be positive semidefinite")
    return 0.5 * (eta + eta.T)


@dataclass
class GratingProfile:
    """Sampled envelopes on a uniform grid; sample ``j`` describes ``[j dx, (j+1) dx)``."""

    x: np.ndarray
    dn_ac: np.ndarray
    dn_dc: np.ndarray
    theta_rate: np.ndarray
    eta: np.ndarray
    modes: ModeSet
    dx: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        n = self.x.size
        self.dn_ac = np.broadcast_to(np.asarray(self.dn_ac, dtype=float), (n,)).copy()
        self.dn_dc = np.broadcast_to(np.asarray(self.dn_dc, dtype=float), (n,)).copy()
        self.theta_rate = np.broadcast_to(np.asarray(self.theta_rate, dtype=float), (n,)).copy()
        self.eta = validate_eta(self.eta)
        if self.eta.shape[0] != self.modes.p_count:
            raise ValueError("eta size does not match the number of modes")
        if not self.dx > 0:
            raise ValueError("dx must be positive")
        if np.any(self.dn_ac < 0):
            raise ValueError("dn_ac must be nonnegative")

    @property
    def n_samples(self) -> int:
        return self.x.size

    @property
    def p_count(self) -> int:
        return self.eta.shape[0]


def coupling_at(profile: GratingProfile, i: int) -> tuple[np.ndarray, np.ndarray]:
    """``(kappa, sigma)`` at sample ``i``."""
    eta = profile.eta
    kappa = -0.5j * profile.dn_ac[i] * eta
    sigma = profile.dn_dc[i] * eta - 0.5 * profile.theta_rate[i] * np.eye(eta.shape[0])
    return kappa, sigma.astype(complex)


def coupling_arrays(profile: GratingProfile) -> tuple[np.ndarray, np.ndarray]:
    """All samples at once, each of shape ``(N, P, P)``."""
    eta = profile.eta
    p = eta.shape[0]
    kappas = -0.5j * profile.dn_ac[:, None, None] * eta
    sigmas = profile.dn_dc[:, None, None] * eta - 0.5 * profile.theta_rate[:, None, None] * np.eye(p)
    return kappas, sigmas.astype(complex)


def layers_from_profile(profile: GratingProfile) -> list[Layer]:
    """Discrete layers with the closed-form reflector and codirectional section per sample."""
    kappas, sigmas = coupling_arrays(profile)
    kdx = float(np.max(np.abs(profile.dn_ac))) * 0.5 * float(np.linalg.norm(profile.eta, 2)) * profile.dx
    if kdx > KAPPA_DX_WARN:
        warnings.warn(f"max ||kappa|| dx = {kdx:.3g} exceeds {KAPPA_DX_WARN}; refine dx", stacklevel=2)
    return [
        Layer(phi_from_sigma(s, profile.dx), reflector_from_kappa(k, profile.dx), profile.dx)
        for k, s in zip(kappas, sigmas)
    ]


@dataclass
class ProfileFit:
    profile: GratingProfile
    ac_residual: np.ndarray
    dc_residual: np.ndarray


def profile_from_layers(layers, eta, modes: ModeSet, *, x=None, fit_dc: bool = True,
                        fit_chirp: bool = True, align_sections: bool = False) -> ProfileFit:
    """Recover the envelopes from reconstructed layers by least squares on diagonals.

    ``i kappa_pp = (eta_pp / 2) dn_ac`` gives ``dn_ac``;
    ``sigma_pp = dn_dc eta_pp - dtheta/dx / 2`` gives ``dn_dc`` and the chirp.
    Quantities not fitted are returned as zero. Residuals are Euclidean norms
    of the diagonal misfits.

    Layer stripping returns the codirectional section of layer ``j`` centred
    half a cell before its reflector. With ``align_sections`` the
    sigma-derived values of adjacent layers are averaged so that every output
    row refers to the reflector position.
    """
    eta = validate_eta(eta)
    p = eta.shape[0]
    layers = list(layers)
    if not layers:
        raise ValueError("no layers to fit")
    if fit_dc and fit_chirp and p < 2:
        raise UnderdeterminedFit("one mode cannot separate dn_dc from the chirp")
    dx = layers[0].dx
    n = len(layers)
    d_eta = np.diag(eta)
    cols = []
    if fit_dc:
        cols.append(d_eta)
    if fit_chirp:
        cols.append(-0.5 * np.ones(p))
    amat = np.stack(cols, axis=1) if cols else np.zeros((p, 0))
    if cols and np.linalg.matrix_rank(amat) < amat.shape[1]:
        raise UnderdeterminedFit("diagonal of eta does not separate dn_dc from the chirp")
    a_ac = 0.5 * d_eta
    if not np.any(a_ac):
        raise UnderdeterminedFit("eta has a zero diagonal; dn_ac is not identifiable")

    dn_ac = np.zeros(n)
    dn_dc = np.zeros(n)
    chirp = np.zeros(n)
    ac_res = np.zeros(n)
    dc_res = np.zeros(n)
    for j, layer in enumerate(layers):
        kappa = kappa_from_reflector(layer.rho, dx)
        ik = 1j * np.diag(kappa)
        a = float(np.real(a_ac @ ik) / (a_ac @ a_ac))
        dn_ac[j] = a
        ac_res[j] = float(np.linalg.norm(ik - a_ac * a))

        h = unitary_log(layer.phi)
        if np.linalg.norm(h, 2) >= math.pi - 1e-9:
            raise BranchOverflow("codirectional phase reaches pi; refine dx", layer=j)
        s = np.real(np.diag(h)) / dx
        if cols:
            sol = np.linalg.lstsq(amat, s, rcond=None)[0]
            k = 0
            if fit_dc:
                dn_dc[j] = sol[k]
                k += 1
            if fit_chirp:
                chirp[j] = sol[k]
            dc_res[j] = float(np.linalg.norm(amat @ sol - s))
        else:
            dc_res[j] = float(np.linalg.norm(s))
    if align_sections and n > 1:
        dn_dc[:-1] = 0.5 * (dn_dc[:-1] + dn_dc[1:])
        chirp[:-1] = 0.5 * (chirp[:-1] + chirp[1:])
    if x is None:
        x = np.arange(n) * dx
    prof = GratingProfile(np.asarray(x, dtype=float), np.maximum(dn_ac, 0.0), dn_dc, chirp, eta, modes, dx,
                          {"dn_ac_raw": dn_ac})
    return ProfileFit(prof, ac_res, dc_res)


# --- worked example --------------------------------------------------------


def sec5_dn_ac(x):
    x = np.asarray(x, dtype=float)
    return SEC5_AC_PEAK * 0.5 * (1.0 - np.cos(2 * math.pi * x / SEC5_LENGTH))


def sec5_dn_dc(x, phase: float = 0.0):
    """Gaussian times ``cos(2 pi (x - L/2) / 4 mm + phase)``; peak 5e-4 at the center for phase 0."""
    x = np.asarray(x, dtype=float)
    u = x - SEC5_LENGTH / 2
    g = np.exp(-4 * math.log(2) * u**2 / SEC5_DC_FWHM**2)
    return SEC5_DC_PEAK * g * np.cos(2 * math.pi * u / SEC5_DC_PERIOD + phase)


def sec5_theta_rate(x, slope: float = SEC5_CHIRP):
    x = np.asarray(x, dtype=float)
    return slope * (x - SEC5_LENGTH / 2)


def sec5_modes(c: float = C_LIGHT) -> ModeSet:
    n = np.array(SEC5_N)
    n0 = 0.5 * (n[0] + n[-1])
    period = SEC5_LAMBDA0 / (2 * n0)
    return ModeSet(n, period=period, c=c, omega_ref=2 * math.pi * c / SEC5_LAMBDA0)


def sec5_n0() -> float:
    return 0.5 * (SEC5_N[0] + SEC5_N[-1])


def example_profile_sec5(dx: float = SEC5_DX, *, chirp_slope: float = SEC5_CHIRP,
                         dc_phase: float = 0.0) -> GratingProfile:
    """The four-mode chirped grating: 20 mm long, sampled at cell centers.

    The default chirp slope ``(pi/4) 1e7 m^-2`` and the centered cosine in
    ``dn_dc`` reproduce the published peak reflectivities. Pass
    ``chirp_slope=SEC5_CHIRP_LITERAL`` for the slope as printed, which gives
    a much weaker chirp and saturated peaks.
    """
    n = int(round(SEC5_LENGTH / dx))
    x = (np.arange(n) + 0.5) * dx
    return GratingProfile(
        x, sec5_dn_ac(x), sec5_dn_dc(x, dc_phase), sec5_theta_rate(x, chirp_slope), _sec5_eta(), sec5_modes(),
        dx,
        {"name": "sec5", "length": SEC5_LENGTH, "lambda0": SEC5_LAMBDA0, "n0": sec5_n0(),
         "chirp_slope": chirp_slope, "dc_phase": dc_phase},
    )


def simulate_profile(profile: GratingProfile, omegas, *, method: str = "split", with_transmission: bool = False,
                     threads: int | None = None):
    """Reflection spectrum of a grating profile (see :func:`forward.simulate_coupled`)."""
    from .forward import simulate_coupled

    kappas, sigmas = coupling_arrays(profile)
    spec = simulate_coupled(kappas, sigmas, profile.dx, profile.modes, omegas, method=method,
                            with_transmission=with_transmission, threads=threads)
    spec.meta["profile"] = profile.meta.get("name", "custom")
    return spec


def peak_reflectivities(spec, pairs=((0, 0), (1, 1), (2, 2), (3, 3), (0, 3))) -> dict:
    """Max over the grid of ``|R_pq|`` for the listed (zero-based) index pairs."""
    mags = np.abs(spec.r)
    return {(p, q): float(np.max(mags[:, p, q])) for p, q in pairs}
