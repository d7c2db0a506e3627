"""Reflection spectra of layered structures and impulse-response weights.

Spectra are computed by a backward Redheffer recursion: starting from the far
end (``R = 0``, ``T = I``) each layer is prepended in scattering form. This
never forms the full transfer matrix, whose entries grow like ``exp(|kappa| L)``
for strong gratings.

Three layer models are available:

``layered``
    the discrete model ``T_Z T_rho T_Phi`` (codirectional section, reflector,
    then a full delay).
``split``
    the symmetric split ``exp(i D dx/2) exp(i (C_kappa + C_sigma) dx) exp(i D dx/2)``
    of a uniform coupled section; its middle factor does not depend on
    frequency, so it is cheap. Second-order accurate in ``dx`` for a
    continuous coupling profile.
``exact``
    ``exp(i C dx)`` per frequency; slow, used as a reference.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import matfact
from .core import (
    TRANSFER,
    BlockMatrix2P,
    Layer,
    ModeSet,
    coupling_generator,
    transfer_to_scattering,
)
from .errors import DegenerateWindow, NonFinite, SingularBlock

WINDOW_KINDS = ("rect", "raised-cosine", "gaussian")
_WINDOW_ALIASES = {
    "rectangular": "rect",
    "rect": "rect",
    "raised-cosine": "raised-cosine",
    "raised_cosine": "raised-cosine",
    "hann": "raised-cosine",
    "gaussian": "gaussian",
    "gaussian-truncated": "gaussian",
}
MIN_BANDWIDTH_RATIO = 10.0
DEFAULT_BANDWIDTH_RATIO = 20.0
DEFAULT_ROUND_TRIPS = 16.0


@dataclass(frozen=True)
class WindowFn:
    """Frequency window ``W(omega)`` laid over a grid.

    ``rect`` is 1 everywhere. ``raised-cosine`` is ``(1 + cos(pi u)) / 2`` and
    ``gaussian`` is ``exp(-u^2 / (2 alpha^2))``, where ``u`` is the offset from
    the grid center in units of the half-width.
    """

    kind: str = "raised-cosine"
    alpha: float = 0.16

    def __post_init__(self):
        kind = _WINDOW_ALIASES.get(self.kind)
        if kind is None:
            raise ValueError(f"unknown window kind {self.kind!r}; choose from {WINDOW_KINDS}")
        object.__setattr__(self, "kind", kind)
        if not self.alpha > 0:
            raise ValueError("gaussian window width must be positive")

    def weights(self, omegas) -> np.ndarray:
        w = np.asarray(omegas, dtype=float)
        if w.size == 1:
            return np.ones(1)
        center = 0.5 * (w[0] + w[-1])
        half = 0.5 * (w[-1] - w[0])
        u = (w - center) / half
        if self.kind == "rect":
            return np.ones_like(u)
        if self.kind == "raised-cosine":
            return 0.5 * (1.0 + np.cos(np.pi * np.clip(u, -1.0, 1.0)))
        return np.exp(-0.5 * (u / self.alpha) ** 2)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "gaussian":
            d["alpha"] = self.alpha
        return d


@dataclass
class SpectrumGrid:
    """Reflection matrix ``R(omega)`` sampled on a uniform detuning grid.

    ``t`` optionally holds the transmission block ``S21`` for unitarity checks.
    """

    omegas: np.ndarray
    r: np.ndarray
    modes: ModeSet | None = None
    window: WindowFn | None = None
    t: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.omegas = np.asarray(self.omegas, dtype=float)
        self.r = np.asarray(self.r, dtype=complex)
        if self.omegas.ndim != 1 or self.omegas.size < 1:
            raise ValueError("omegas must be a non-empty 1-D grid")
        if self.r.ndim != 3 or self.r.shape[0] != self.omegas.size or self.r.shape[1] != self.r.shape[2]:
            raise ValueError(f"r must have shape (M, P, P) matching omegas, got {self.r.shape}")
        if self.t is not None:
            self.t = np.asarray(self.t, dtype=complex)
            if self.t.shape != self.r.shape:
                raise ValueError("transmission must have the same shape as r")

    @property
    def p_count(self) -> int:
        return self.r.shape[1]

    @property
    def m(self) -> int:
        return self.omegas.size

    @property
    def omega_max(self) -> float:
        return 0.5 * float(self.omegas[-1] - self.omegas[0])

    def replace_r(self, r: np.ndarray) -> "SpectrumGrid":
        return SpectrumGrid(self.omegas, r, self.modes, self.window, None, dict(self.meta))

    def physical_defects(self) -> dict:
        """Per-frequency reciprocity, unitarity and contraction defects.

        Unitarity needs the transmission block and is ``nan`` without it.
        """
        r = self.r
        eye = np.eye(self.p_count)
        rec = np.linalg.norm(r - np.swapaxes(r, -1, -2), 2, axis=(-2, -1))
        norm_r = np.linalg.norm(r, 2, axis=(-2, -1))
        if self.t is not None:
            h = lambda a: np.swapaxes(a.conj(), -1, -2)  # noqa: E731
            uni = np.linalg.norm(h(r) @ r + h(self.t) @ self.t - eye, 2, axis=(-2, -1))
        else:
            uni = np.full(self.m, np.nan)
        return {"reciprocity": rec, "unitarity": uni, "norm_r": norm_r,
                "contraction": np.maximum(0.0, norm_r - 1.0)}


def uniform_grid(omega_max: float, m: int, center: float = 0.0) -> np.ndarray:
    """``m + 1`` points spanning ``[center - omega_max, center + omega_max]``."""
    if m < 1 or not omega_max > 0:
        raise ValueError("grid needs m >= 1 and omega_max > 0")
    return center + np.linspace(-omega_max, omega_max, m + 1)


def bandwidth_ratio(omega_max: float, modes: ModeSet, dx: float) -> float:
    """``omega_max * min_p dt_p`` with ``dt_p = n_p dx / c``."""
    return float(omega_max * np.min(modes.delays(dx)))


def design_grid(modes: ModeSet, dx: float, n_layers: int, *, ratio: float = DEFAULT_BANDWIDTH_RATIO,
                min_points: int | None = None, round_trips: float = DEFAULT_ROUND_TRIPS) -> np.ndarray:
    """Grid for exact discrete inversion.

    ``omega_max = ratio / min dt`` and the number of intervals is the smallest
    power of two that is at least ``8 N`` and keeps the time period
    ``2 pi / d_omega`` above ``round_trips`` times the longest round trip.
    Multiple reflections in strong stacks decay slowly; a short period
    folds that tail back onto ``t = 0`` and biases ``h0``.
    """
    dt = modes.delays(dx)
    omega_max = ratio / float(np.min(dt))
    longest = 2.0 * n_layers * float(np.max(dt))
    need = max(8 * n_layers, math.ceil(round_trips * longest * omega_max / math.pi), min_points or 0, 16)
    m = 1 << (need - 1).bit_length()
    return uniform_grid(omega_max, m)


def quasi_continuous_grid(n0: float, dx: float, n_layers: int, *, c: float, oversample: int = 8) -> np.ndarray:
    """Grid of one period of the discrete model with round trip ``2 n0 dx / c``.

    ``omega_max = pi c / (2 n0 dx)``; the number of intervals is a power of
    two of at least ``oversample * N``.
    """
    omega_max = math.pi * c / (2.0 * n0 * dx)
    m = 1 << (max(oversample * n_layers, 16) - 1).bit_length()
    return uniform_grid(omega_max, m)


# --- recursion -------------------------------------------------------------


def _prepend(r, tr, sc, zl, zr):
    """Prepend one section to the structure on its right.

    ``sc`` is the section's scattering matrix (``(2P, 2P)`` or stacked), ``zl``
    and ``zr`` are diagonal delays (``(M, P)``) on its left and right.
    """
    p = r.shape[-1]
    s11, s12 = sc[..., :p, :p], sc[..., :p, p:]
    s21, s22 = sc[..., p:, :p], sc[..., p:, p:]
    x = zr[:, :, None] * r * zr[:, None, :]
    a = np.eye(p) - s22 @ x
    y = np.linalg.solve(a, np.broadcast_to(s21, a.shape))
    core = s11 + (s12 @ x) @ y
    r_new = zl[:, :, None] * core * zl[:, None, :]
    tr_new = None
    if tr is not None:
        tr_new = ((tr * zr[:, None, :]) @ y) * zl[:, None, :]
    return r_new, tr_new


def _run_chunks(fn, omegas: np.ndarray, threads: int | None):
    threads = max(1, int(threads or 1))
    if threads == 1 or omegas.size < 2 * threads:
        return fn(omegas)
    chunks = np.array_split(np.arange(omegas.size), threads)
    with ThreadPoolExecutor(max_workers=threads) as ex:
        parts = list(ex.map(lambda idx: fn(omegas[idx]), chunks))
    r = np.concatenate([p[0] for p in parts])
    t = None if parts[0][1] is None else np.concatenate([p[1] for p in parts])
    return r, t


def _finish(r, t, omegas):
    bad = ~np.all(np.isfinite(r.reshape(r.shape[0], -1)), axis=1)
    if np.any(bad):
        raise NonFinite("non-finite reflection", omega=float(omegas[int(np.argmax(bad))]))
    return r, t


def _recurse(sections, modes: ModeSet, omegas: np.ndarray, want_t: bool, threads: int | None):
    """``sections``: list of (scattering, dx_left, dx_right) from front to back.

    ``scattering`` is either a fixed ``(2P, 2P)`` array or a callable
    ``omegas -> (M, 2P, 2P)``.
    """
    p = modes.p_count

    def run(om):
        m = om.size
        r = np.zeros((m, p, p), dtype=complex)
        tr = np.broadcast_to(np.eye(p, dtype=complex), (m, p, p)).copy() if want_t else None
        beta = modes.beta(om)
        cache = {}

        def delay(d):
            if d == 0:
                return None
            if d not in cache:
                cache[d] = np.exp(1j * beta * d)
            return cache[d]

        ones = np.ones((m, p), dtype=complex)
        for sc, dl, dr in reversed(sections):
            s = sc(om) if callable(sc) else sc
            zl, zr = delay(dl), delay(dr)
            try:
                r, tr = _prepend(r, tr, s, ones if zl is None else zl, ones if zr is None else zr)
            except np.linalg.LinAlgError as exc:
                raise SingularBlock("I - S22 R is singular while prepending a layer") from exc
        return r, tr

    if not sections:
        m = omegas.size
        r = np.zeros((m, p, p), dtype=complex)
        t = np.broadcast_to(np.eye(p, dtype=complex), (m, p, p)).copy() if want_t else None
        return r, t
    r, t = _run_chunks(run, omegas, threads)
    return _finish(r, t, omegas)


def simulate_reflection(layers: Sequence[Layer], modes: ModeSet, omegas, *, with_transmission: bool = False,
                        threads: int | None = None) -> SpectrumGrid:
    """Reflection ``R = S11`` of a sequence of discrete layers (layer 0 first)."""
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    if not np.all(np.isfinite(omegas)):
        raise NonFinite("frequency grid has non-finite entries")
    sections = []
    for j, layer in enumerate(layers):
        if layer.p_count != modes.p_count:
            raise ValueError(f"layer {j} has P={layer.p_count}, modes have P={modes.p_count}")
        sections.append((layer.core_scattering.data, 0.0, layer.dx))
    r, t = _recurse(sections, modes, omegas, with_transmission, threads)
    meta = {"method": "layered", "n_layers": len(layers)}
    if layers:
        meta["dx"] = float(layers[0].dx)
    return SpectrumGrid(omegas, r, modes, None, t, meta)


def section_scattering(kappa, sigma, dx: float) -> np.ndarray:
    """Scattering matrix of ``exp(i (C_kappa + C_sigma) dx)`` (no propagation term)."""
    tmat = matfact.mat_exp(1j * coupling_generator(kappa, sigma) * dx)
    return transfer_to_scattering(BlockMatrix2P(tmat, TRANSFER)).data


def simulate_coupled(kappas, sigmas, dx: float, modes: ModeSet, omegas, *, method: str = "split",
                     with_transmission: bool = False, threads: int | None = None) -> SpectrumGrid:
    """Reflection of a piecewise-uniform coupled-mode structure.

    ``kappas`` and ``sigmas`` have shape ``(N, P, P)``; section ``j`` occupies
    ``[j dx, (j + 1) dx)``.
    """
    from .core import phi_from_sigma, reflector_from_kappa

    kappas = np.asarray(kappas, dtype=complex)
    sigmas = np.asarray(sigmas, dtype=complex)
    if kappas.shape != sigmas.shape or kappas.ndim != 3:
        raise ValueError("kappas and sigmas must both have shape (N, P, P)")
    if kappas.shape[0] and kappas.shape[1] != modes.p_count:
        raise ValueError("coupling matrices do not match the mode count")
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    n = kappas.shape[0]
    if method == "layered":
        layers = [Layer(phi_from_sigma(s, dx), reflector_from_kappa(k, dx), dx) for k, s in zip(kappas, sigmas)]
        spec = simulate_reflection(layers, modes, omegas, with_transmission=with_transmission, threads=threads)
        return spec
    if method == "split":
        gens = 1j * coupling_generator(kappas, sigmas) * dx if n else np.zeros((0, 2 * modes.p_count, 2 * modes.p_count))
        mids = matfact.mat_exp(gens) if n else gens
        sc = transfer_to_scattering(BlockMatrix2P(mids, TRANSFER)).data if n else mids
        sections = [(sc[j], 0.5 * dx, 0.5 * dx) for j in range(n)]
    elif method == "exact":
        p = modes.p_count

        def make(k, s):
            base = coupling_generator(k, s)

            def sc(om):
                beta = modes.beta(om)
                d = np.zeros((om.size, 2 * p, 2 * p), dtype=complex)
                idx = np.arange(p)
                d[:, idx, idx] = beta
                d[:, idx + p, idx + p] = -beta
                tm = matfact.mat_exp(1j * (d + base) * dx)
                return transfer_to_scattering(BlockMatrix2P(tm, TRANSFER)).data

            return sc

        sections = [(make(k, s), 0.0, 0.0) for k, s in zip(kappas, sigmas)]
    else:
        raise ValueError(f"unknown forward method {method!r}")
    r, t = _recurse(sections, modes, omegas, with_transmission, threads)
    return SpectrumGrid(omegas, r, modes, None, t, {"method": method, "n_layers": n, "dx": float(dx)})


# --- impulse response ------------------------------------------------------


def trapezoid_weights(omegas: np.ndarray, window: WindowFn) -> np.ndarray:
    w = window.weights(omegas).astype(float)
    if w.size > 1:
        w[0] *= 0.5
        w[-1] *= 0.5
    return w


def zeroth_impulse_weight(spec: SpectrumGrid, window: WindowFn | None = None, *, dx: float | None = None) -> np.ndarray:
    """Windowed mean ``h0 = sum W R / sum W`` (trapezoid end weights).

    With ``dx`` and the spectrum's modes known, warns when
    ``omega_max * min dt < 10``.
    """
    window = window or spec.window or WindowFn()
    w = trapezoid_weights(spec.omegas, window)
    total = float(np.sum(w))
    if not total > 1e-12 * w.size:
        raise DegenerateWindow("window weights sum to zero")
    if dx is not None and spec.modes is not None:
        ratio = bandwidth_ratio(spec.omega_max, spec.modes, dx)
        if ratio < MIN_BANDWIDTH_RATIO:
            warnings.warn(f"bandwidth ratio omega_max*min(dt) = {ratio:.3g} is below {MIN_BANDWIDTH_RATIO:g}",
                          stacklevel=2)
    h0 = np.tensordot(w, spec.r, axes=(0, 0)) / total
    return h0


def impulse_response(spec: SpectrumGrid, times, window: WindowFn | None = None) -> np.ndarray:
    """Windowed pulse weights ``h(t) = sum W R e^{-i omega t} / sum W``.

    Normalized so that an isolated pulse ``A e^{i omega t_k}`` in ``R`` shows
    up with weight ``A`` at ``t = t_k``; ``h(0)`` equals
    :func:`zeroth_impulse_weight`. Shape ``(len(times), P, P)``.
    """
    window = window or spec.window or WindowFn()
    w = trapezoid_weights(spec.omegas, window)
    total = float(np.sum(w))
    if not total > 0:
        raise DegenerateWindow("window weights sum to zero")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    kernel = np.exp(-1j * np.outer(times, spec.omegas)) * w[None, :] / total
    return np.tensordot(kernel, spec.r, axes=(1, 0))
