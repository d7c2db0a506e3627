"""Layer model and transfer/scattering matrix algebra.

Field vectors are ``[u; v]`` with ``u`` the P forward amplitudes and ``v`` the
P backward amplitudes. A transfer matrix maps the fields on the left of a
component to those on its right; a scattering matrix maps incoming fields
``[u_left; v_right]`` to outgoing ``[v_left; u_right]``.

A discrete layer is a codirectional section ``Phi`` followed by a reflector
``rho`` and a delay ``Z^-1 = exp(i beta dx)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import matfact
from .errors import (
    AsymmetricInput,
    NotLossless,
    NotReciprocal,
    NotUnitary,
    ReflectorTooStrong,
    SingularBlock,
)

C_LIGHT = 299_792_458.0
EPS_MARGIN = 1e-6
TAU_PHYS = 1e-9
COND_LIMIT = 1e12

TRANSFER = "transfer"
SCATTERING = "scattering"


@dataclass(frozen=True)
class ModeSet:
    """The P propagating modes.

    ``beta(omega)`` gives the per-mode phase rate at grid detuning ``omega``
    (rad/s). With ``period > 0`` the grating carrier is removed:
    ``n (omega_ref + omega) / c - pi / period``; otherwise ``n omega / c``
    (``omega_ref`` still shifts the origin). ``loss`` adds ``i * loss`` and is
    only meaningful for forward simulation.
    """

    n: np.ndarray
    period: float = 0.0
    c: float = C_LIGHT
    omega_ref: float = 0.0
    loss: np.ndarray | None = None

    def __post_init__(self):
        n = np.atleast_1d(np.asarray(self.n, dtype=float)).copy()
        if n.ndim != 1 or n.size < 1:
            raise ValueError("ModeSet needs at least one effective index")
        if np.any(n <= 0) or not np.all(np.isfinite(n)):
            raise ValueError("effective indices must be positive and finite")
        if self.period < 0:
            raise ValueError("grating period must be >= 0")
        if self.c <= 0:
            raise ValueError("reference velocity must be positive")
        n.flags.writeable = False
        object.__setattr__(self, "n", n)
        if self.loss is not None:
            loss = np.broadcast_to(np.asarray(self.loss, dtype=float), n.shape).copy()
            if np.any(loss < 0):
                raise ValueError("modal loss must be nonnegative")
            loss.flags.writeable = False
            object.__setattr__(self, "loss", loss)

    @property
    def p_count(self) -> int:
        return int(self.n.size)

    @property
    def lossless(self) -> bool:
        return self.loss is None or not np.any(self.loss)

    def beta(self, omega) -> np.ndarray:
        """Phase rates, shape ``omega.shape + (P,)``."""
        w = np.asarray(omega, dtype=float)[..., None]
        b = self.n * (self.omega_ref + w) / self.c
        if self.period > 0:
            b = b - np.pi / self.period
        b = b.astype(complex)
        if self.loss is not None:
            b = b + 1j * self.loss
        return b

    def delays(self, dx: float) -> np.ndarray:
        """One-way group delay of each mode through a thickness ``dx``."""
        return self.n * dx / self.c

    def subset(self, idx) -> "ModeSet":
        idx = np.atleast_1d(idx)
        loss = None if self.loss is None else self.loss[idx]
        return ModeSet(self.n[idx], self.period, self.c, self.omega_ref, loss)


def transmission_from_reflector(rho: np.ndarray) -> np.ndarray:
    """Positive definite ``t`` with ``t^2 = I - rho rho^*``."""
    rho = np.asarray(rho, dtype=complex)
    return matfact.hermitian_sqrt(np.eye(rho.shape[0]) - rho @ rho.conj())


@dataclass(frozen=True)
class Layer:
    """One discrete layer: codirectional unitary, reflector and thickness."""

    phi: np.ndarray
    rho: np.ndarray
    dx: float

    def __post_init__(self):
        phi = matfact.as_square(self.phi, "phi")
        rho = matfact.as_square(self.rho, "rho")
        if phi.shape != rho.shape:
            raise ValueError("phi and rho must have the same shape")
        if self.dx <= 0:
            raise ValueError("layer thickness must be positive")
        if matfact.unitarity_defect(phi) > matfact.TAU_FACT * max(1, phi.shape[0]):
            raise NotUnitary("codirectional section is not unitary")
        if np.linalg.norm(rho - rho.T, 2) > matfact.TAU_SYM:
            raise AsymmetricInput("reflector is not symmetric")
        rho = 0.5 * (rho + rho.T)
        if np.linalg.norm(rho, 2) >= 1 - EPS_MARGIN:
            raise ReflectorTooStrong(f"reflector norm {np.linalg.norm(rho, 2):.12g} >= 1 - {EPS_MARGIN:g}")
        for arr in (phi, rho):
            arr.flags.writeable = False
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def identity(cls, p: int, dx: float) -> "Layer":
        return cls(np.eye(p), np.zeros((p, p)), dx)

    @property
    def p_count(self) -> int:
        return self.phi.shape[0]

    @cached_property
    def t(self) -> np.ndarray:
        return transmission_from_reflector(self.rho)

    @cached_property
    def upsilon(self) -> np.ndarray:
        """Reflection seen from the left, ``Phi^T rho Phi``."""
        u = self.phi.T @ self.rho @ self.phi
        return 0.5 * (u + u.T)

    @cached_property
    def k(self) -> np.ndarray:
        """``K = t^{-1*} Phi``."""
        return np.linalg.solve(self.t.conj(), self.phi)

    @cached_property
    def core_scattering(self) -> "BlockMatrix2P":
        """Scattering matrix of the delay-free part (``Phi`` then ``rho``)."""
        return transfer_to_scattering(_reflector_transfer(self.rho) @ _phi_transfer(self.phi))


def _phi_transfer(phi: np.ndarray) -> "BlockMatrix2P":
    p = phi.shape[0]
    z = np.zeros((p, p))
    return BlockMatrix2P.from_blocks(phi, z, z, phi.conj(), TRANSFER)


def _reflector_transfer(rho: np.ndarray) -> "BlockMatrix2P":
    t = transmission_from_reflector(rho)
    ti = np.linalg.inv(t)
    return BlockMatrix2P.from_blocks(ti.conj(), -ti.conj() @ rho.conj(), -ti @ rho, ti, TRANSFER)


@dataclass(frozen=True)
class BlockMatrix2P:
    """A 2P x 2P transfer or scattering matrix, optionally stacked over a grid.

    ``data`` has shape ``(..., 2P, 2P)``.
    """

    data: np.ndarray
    kind: str = TRANSFER

    def __post_init__(self):
        d = np.asarray(self.data, dtype=complex)
        if d.ndim < 2 or d.shape[-1] != d.shape[-2] or d.shape[-1] % 2:
            raise ValueError(f"block matrix must be (..., 2P, 2P), got {d.shape}")
        if self.kind not in (TRANSFER, SCATTERING):
            raise ValueError(f"unknown kind {self.kind!r}")
        object.__setattr__(self, "data", d)

    @classmethod
    def from_blocks(cls, b11, b12, b21, b22, kind: str = TRANSFER) -> "BlockMatrix2P":
        b11, b12, b21, b22 = np.broadcast_arrays(*(np.asarray(b, dtype=complex) for b in (b11, b12, b21, b22)))
        top = np.concatenate([b11, b12], axis=-1)
        bot = np.concatenate([b21, b22], axis=-1)
        return cls(np.concatenate([top, bot], axis=-2), kind)

    @property
    def p(self) -> int:
        return self.data.shape[-1] // 2

    @property
    def b11(self):
        return self.data[..., : self.p, : self.p]

    @property
    def b12(self):
        return self.data[..., : self.p, self.p :]

    @property
    def b21(self):
        return self.data[..., self.p :, : self.p]

    @property
    def b22(self):
        return self.data[..., self.p :, self.p :]

    def __matmul__(self, other: "BlockMatrix2P") -> "BlockMatrix2P":
        if self.kind != TRANSFER or other.kind != TRANSFER:
            raise TypeError("only transfer matrices multiply")
        return BlockMatrix2P(self.data @ other.data, TRANSFER)


def layer_transfer(layer: Layer, modes: ModeSet, omega) -> BlockMatrix2P:
    """Transfer matrix ``T_Z T_rho T_Phi`` of one layer at detuning(s) ``omega``.

    Written out this is ``[[Z^-1 K, -Z^-1 K Y^*], [-Z K^* Y, Z K^*]]`` with
    ``Y = Phi^T rho Phi`` and ``K = t^{-1*} Phi``.
    """
    zinv = np.exp(1j * modes.beta(omega) * layer.dx)  # (..., P)
    z = 1.0 / zinv
    k, y = layer.k, layer.upsilon
    b11 = zinv[..., :, None] * k
    b12 = -zinv[..., :, None] * (k @ y.conj())
    b21 = -z[..., :, None] * (k.conj() @ y)
    b22 = z[..., :, None] * k.conj()
    return BlockMatrix2P.from_blocks(b11, b12, b21, b22, TRANSFER)


def _check_invertible(block: np.ndarray, what: str, omega=None):
    cond = np.linalg.cond(block)
    bad = ~np.isfinite(cond) | (cond > COND_LIMIT)
    if np.any(bad):
        idx = np.unravel_index(int(np.argmax(bad)), bad.shape) if bad.ndim else ()
        om = None
        if omega is not None and bad.ndim:
            om = float(np.asarray(omega)[idx])
        worst = float(np.max(np.where(np.isfinite(cond), cond, np.inf)))
        raise SingularBlock(f"{what} is numerically singular (condition number {worst:.3g})", omega=om)
    return cond


def transfer_to_scattering(t: BlockMatrix2P, omega=None) -> BlockMatrix2P:
    """Convert a transfer matrix to a scattering matrix.

    ``S11 = -T22^-1 T21``, ``S12 = T22^-1``, ``S21 = T11 - T12 T22^-1 T21``,
    ``S22 = T12 T22^-1``. Raises SingularBlock if ``T22`` has condition number
    above 1e12.
    """
    if t.kind != TRANSFER:
        raise TypeError("expected a transfer matrix")
    _check_invertible(t.b22, "T22", omega)
    t22i = np.linalg.inv(t.b22)
    s11 = -t22i @ t.b21
    s12 = t22i
    s21 = t.b11 + t.b12 @ s11
    s22 = t.b12 @ t22i
    return BlockMatrix2P.from_blocks(s11, s12, s21, s22, SCATTERING)


def scattering_to_transfer(s: BlockMatrix2P, omega=None) -> BlockMatrix2P:
    """Convert a scattering matrix to a transfer matrix (needs ``S12`` invertible)."""
    if s.kind != SCATTERING:
        raise TypeError("expected a scattering matrix")
    _check_invertible(s.b12, "S12", omega)
    s12i = np.linalg.inv(s.b12)
    t21 = -s12i @ s.b11
    t22 = s12i
    t11 = s.b21 + s.b22 @ t21
    t12 = s.b22 @ s12i
    return BlockMatrix2P.from_blocks(t11, t12, t21, t22, TRANSFER)


def compose(transfers: Sequence[BlockMatrix2P]) -> BlockMatrix2P:
    """Total transfer matrix ``T_{N-1} ... T_1 T_0`` for ``transfers = [T_0, ..., T_{N-1}]``."""
    if len(transfers) == 0:
        raise ValueError("compose needs at least one transfer matrix")
    total = transfers[0]
    for t in transfers[1:]:
        if t.data.shape[-1] != total.data.shape[-1]:
            raise ValueError("transfer matrices have mismatched dimensions")
        total = t @ total
    return total


@dataclass(frozen=True)
class Sandwich:
    """``S11 = Phi_l^T rho Phi_l``, ``S22 = -Phi_r rho Phi_r^T``, ``S21 = Phi_r t Phi_l``."""

    phi_l: np.ndarray
    rho: np.ndarray
    phi_r: np.ndarray

    @property
    def t(self) -> np.ndarray:
        return np.diag(np.sqrt(1.0 - np.diag(self.rho).real ** 2))

    def scattering(self) -> BlockMatrix2P:
        pl, r, pr, t = self.phi_l, self.rho, self.phi_r, self.t
        s21 = pr @ t @ pl
        return BlockMatrix2P.from_blocks(pl.T @ r @ pl, s21.T, s21, -pr @ r @ pr.T, SCATTERING)


def sandwich_decompose(s: BlockMatrix2P, *, tol: float = 1e-8) -> Sandwich:
    """Split a reciprocal lossless scattering matrix into unitary - reflector - unitary.

    ``rho`` is diagonal and nonnegative (Takagi values of ``S11``); ``Phi_l``
    is the Takagi factor and ``Phi_r = S21 Phi_l^H t^-1``.
    """
    if s.kind != SCATTERING:
        raise TypeError("expected a scattering matrix")
    d = s.data
    if d.ndim != 2:
        raise ValueError("sandwich_decompose takes a single scattering matrix")
    if np.linalg.norm(d - d.T, 2) > tol:
        raise NotReciprocal("scattering matrix is not symmetric")
    if np.linalg.norm(d.conj().T @ d - np.eye(d.shape[0]), 2) > tol:
        raise NotLossless("scattering matrix is not unitary")
    tk = matfact.takagi(s.b11)
    rho = np.clip(tk.sigma, 0.0, 1.0)
    t = np.sqrt(1.0 - rho**2)
    if np.any(t < EPS_MARGIN):
        raise ReflectorTooStrong("component contains a total reflector")
    phi_l = tk.u
    phi_r = (s.b21 @ phi_l.conj().T) / t[None, :]
    return Sandwich(phi_l=phi_l, rho=np.diag(rho), phi_r=phi_r)


@dataclass(frozen=True)
class PhysicalReport:
    reciprocity_defect: np.ndarray | float
    unitarity_defect: np.ndarray | float
    contraction_defect: np.ndarray | float

    def worst(self) -> dict:
        return {
            "reciprocity_defect": float(np.max(self.reciprocity_defect)),
            "unitarity_defect": float(np.max(self.unitarity_defect)),
            "contraction_defect": float(np.max(self.contraction_defect)),
        }


def _norm2(a: np.ndarray):
    return np.linalg.norm(a, 2, axis=(-2, -1))


def check_physical(s: BlockMatrix2P) -> PhysicalReport:
    """Reciprocity, unitarity and contraction defects of a scattering matrix.

    ``contraction_defect = max(0, ||S11||_2 - 1)``. Works elementwise on a stack.
    """
    d = s.data
    eye = np.eye(d.shape[-1])
    rec = _norm2(d - np.swapaxes(d, -1, -2))
    uni = _norm2(np.swapaxes(d.conj(), -1, -2) @ d - eye)
    con = np.maximum(0.0, _norm2(s.b11) - 1.0)
    if d.ndim == 2:
        rec, uni, con = float(rec), float(uni), float(con)
    return PhysicalReport(rec, uni, con)


def reflector_from_kappa(kappa, dx: float) -> np.ndarray:
    """``rho = i tanh(X dx) X^-1 kappa^*`` with ``X = (kappa^* kappa)^{1/2}``."""
    kappa = np.asarray(kappa, dtype=complex)
    kk = kappa.conj() @ kappa
    vals, vecs = np.linalg.eigh(0.5 * (kk + kk.conj().T))
    x = np.sqrt(np.clip(vals, 0.0, None))
    # tanh(x dx)/x -> dx as x -> 0
    f = np.where(x * dx > 1e-8, np.tanh(x * dx) / np.where(x > 0, x, 1.0), dx)
    rho = 1j * (vecs * f) @ vecs.conj().T @ kappa.conj()
    return 0.5 * (rho + rho.T)


def kappa_from_reflector(rho, dx: float) -> np.ndarray:
    """Inverse of :func:`reflector_from_kappa`.

    With ``rho rho^H = V diag(s^2) V^H``: ``kappa^* = -i V diag(atanh(s)/(s dx)) V^H rho``.
    """
    rho = np.asarray(rho, dtype=complex)
    rr = rho @ rho.conj().T
    vals, vecs = np.linalg.eigh(0.5 * (rr + rr.conj().T))
    s = np.sqrt(np.clip(vals, 0.0, None))
    if np.any(s >= 1):
        raise ReflectorTooStrong("reflector has a singular value >= 1")
    f = np.where(s > 1e-8, np.arctanh(s) / np.where(s > 0, s, 1.0), 1.0) / dx
    kstar = -1j * (vecs * f) @ vecs.conj().T @ rho
    k = kstar.conj()
    return 0.5 * (k + k.T)


def phi_from_sigma(sigma, dx: float) -> np.ndarray:
    """``Phi = exp(i sigma dx)`` for Hermitian ``sigma``."""
    sigma = np.asarray(sigma, dtype=complex)
    vals, vecs = np.linalg.eigh(0.5 * (sigma + sigma.conj().T))
    return (vecs * np.exp(1j * vals * dx)) @ vecs.conj().T


def coupling_generator(kappa, sigma) -> np.ndarray:
    """``C_kappa + C_sigma = [[sigma, kappa], [-kappa^*, -sigma^*]]`` (no propagation term)."""
    kappa = np.asarray(kappa, dtype=complex)
    sigma = np.asarray(sigma, dtype=complex)
    top = np.concatenate([sigma, kappa], axis=-1)
    bot = np.concatenate([-kappa.conj(), -sigma.conj()], axis=-1)
    return np.concatenate([top, bot], axis=-2)
