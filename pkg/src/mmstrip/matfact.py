"""Dense complex factorizations used by the layer model.

Contains the Takagi factorization of complex symmetric matrices
(``Y = U^T diag(sigma) U``), the split of a unitary matrix into a real
orthogonal factor times a symmetric unitary factor (``U = P Phi``), the
principal square root of a symmetric unitary matrix and the matrix
exponential.

All functions are pure and accept plain array-likes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import AsymmetricInput, CommutationViolation, NonFinite, NotUnitary

TAU_FACT = 1e-10
TAU_SYM = 1e-8

# singular values closer than this (relative to the largest) share one W block
_CLUSTER_RTOL = 1e-6
# coefficients for the A + cB trick that simultaneously diagonalizes Re/Im parts
_MIX_COEFFS = (0.6180339887498949, -1.3247179572447460, 0.4142135623730950, 2.718281828459045)


@dataclass(frozen=True)
class TakagiResult:
    """``upsilon = u.T @ diag(sigma) @ u`` with ``u`` unitary, ``sigma`` descending."""

    sigma: np.ndarray
    u: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.u.T @ (self.sigma[:, None] * self.u)


@dataclass(frozen=True)
class OrthSymResult:
    """``u = p @ phi`` with ``p`` real orthogonal and ``phi`` symmetric unitary."""

    p: np.ndarray
    phi: np.ndarray


def as_square(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite complex square 2-D array."""
    arr = np.array(a, dtype=complex)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} has non-finite entries")
    return arr


def unitarity_defect(u: np.ndarray) -> float:
    u = np.asarray(u)
    return float(np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0]), 2))


def _principal_sqrt_phase(lam: np.ndarray) -> np.ndarray:
    """Square root with the eigenphase halved into (-pi/2, pi/2]."""
    theta = np.angle(lam)
    # angle(-1 - 0j) is -pi; the branch keeps +pi
    theta = np.where(theta <= -np.pi + 1e-15, theta + 2 * np.pi, theta)
    return np.sqrt(np.abs(lam)) * np.exp(0.5j * theta)


def _sqrt_normal(w: np.ndarray) -> np.ndarray:
    """Principal square root of a normal matrix via its complex Schur form."""
    t, z = sla.schur(w, output="complex")
    d = _principal_sqrt_phase(np.diag(t))
    return (z * d) @ z.conj().T


def takagi_of_symmetric_unitary(w, commuting_with=None, *, tol: float = TAU_FACT) -> np.ndarray:
    """Principal square root of a symmetric unitary matrix.

    Parameters
    ----------
    w : (P, P) complex
        Symmetric unitary matrix.
    commuting_with : (P,) real or (P, P) real diagonal, optional
        Diagonal that ``w`` must commute with. The root is a polynomial in
        ``w`` and so commutes with it too.

    Returns
    -------
    (P, P) complex
        Symmetric unitary ``s`` with ``s @ s == w``; eigenphases lie in
        (-pi/2, pi/2].
    """
    w = as_square(w, "w")
    if unitarity_defect(w) > tol * max(1, w.shape[0]):
        raise NotUnitary("w is not unitary")
    if np.linalg.norm(w - w.T, 2) > TAU_SYM:
        raise AsymmetricInput("w is not symmetric")
    if commuting_with is not None:
        d = np.asarray(commuting_with, dtype=float)
        if d.ndim == 2:
            d = np.diag(d)
        comm = w * d[None, :] - d[:, None] * w
        if np.linalg.norm(comm, 2) > tol * max(1.0, float(np.max(np.abs(d), initial=0.0))):
            raise CommutationViolation("w does not commute with the supplied diagonal")
    s = _sqrt_normal(w)
    return 0.5 * (s + s.T)


def _clusters(values: np.ndarray, gap: float) -> list[list[int]]:
    """Group indices of a descending sequence whose neighbours differ by <= gap."""
    groups: list[list[int]] = []
    for i, v in enumerate(values):
        if groups and values[groups[-1][-1]] - v <= gap:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def _canonical_row_signs(u: np.ndarray) -> np.ndarray:
    """Flip rows so the largest entry of each row has positive real part."""
    out = u.copy()
    for k in range(u.shape[0]):
        row = u[k]
        mag = np.abs(row)
        idx = int(np.argmax(mag >= mag.max() * (1 - 1e-9)))
        ref = row[idx]
        if ref.real < -1e-12 * mag.max() or (abs(ref.real) <= 1e-12 * mag.max() and ref.imag < 0):
            out[k] = -row
    return out


def takagi(upsilon, *, tau_sym: float = TAU_SYM) -> TakagiResult:
    """Takagi factorization ``upsilon = U^T diag(sigma) U`` of a complex symmetric matrix.

    Built from an SVD ``upsilon = V1 S V2``: ``W = conj(V2) V1`` commutes with
    ``S`` and is symmetric on the non-zero singular values, so
    ``U = sqrt(W) V2``. On the block of zero singular values the root is taken
    as the identity, which means those rows of ``U`` come straight from ``V2``.

    Singular values are returned in descending order. Rows belonging to a
    single singular value are fixed up to sign; the sign is chosen so the
    largest entry of each row has positive real part.
    """
    a = as_square(upsilon, "upsilon")
    scale = max(1.0, float(np.linalg.norm(a, 2)))
    if np.linalg.norm(a - a.T, 2) > tau_sym * scale:
        raise AsymmetricInput("upsilon is not symmetric")
    a = 0.5 * (a + a.T)
    p = a.shape[0]

    v1, s, v2 = np.linalg.svd(a)
    smax = s[0] if p else 0.0
    eps_sv = p * smax * 1e-12
    nonzero = int(np.count_nonzero(s > eps_sv))
    w = v2.conj() @ v1

    sqrt_w = np.eye(p, dtype=complex)
    for group in _clusters(s[:nonzero], _CLUSTER_RTOL * smax):
        lo, hi = group[0], group[-1] + 1
        blk = w[lo:hi, lo:hi]
        blk = 0.5 * (blk + blk.T)
        if hi - lo == 1:
            sqrt_w[lo, lo] = _principal_sqrt_phase(blk[0, 0] / abs(blk[0, 0]))
        else:
            # renormalize the block onto the unitary group before taking the root
            uu, _, vv = np.linalg.svd(blk)
            blk = uu @ vv
            blk = 0.5 * (blk + blk.T)
            sqrt_w[lo:hi, lo:hi] = _sqrt_normal(blk)
    u = sqrt_w @ v2
    s = np.where(s > eps_sv, s, 0.0)

    u = _canonical_row_signs(u)
    # exact ties: order rows lexicographically by real part
    for group in _clusters(s, 0.0):
        if len(group) > 1:
            blk = u[group]
            order = np.lexsort(tuple(-blk.real[:, c] for c in reversed(range(p))))
            u[group] = blk[order]
    return TakagiResult(sigma=s.astype(float), u=u)


def _real_orthogonal_eig(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition ``m = P1 diag(lam) P1^T`` of a symmetric unitary matrix.

    Re(m) and Im(m) are commuting real symmetric matrices, so a generic real
    combination ``Re(m) + c Im(m)`` shares their eigenvectors. A few values of
    ``c`` are tried and the basis leaving the smallest off-diagonal residual
    wins; this avoids near-collisions of the mixed eigenvalues.
    """
    a, b = m.real, m.imag
    best = None
    for c in _MIX_COEFFS:
        h = a + c * b
        _, p1 = np.linalg.eigh(0.5 * (h + h.T))
        mt = p1.T @ m @ p1
        off = np.linalg.norm(mt - np.diag(np.diag(mt)))
        if best is None or off < best[0]:
            best = (off, p1, np.diag(mt))
        if off < 1e-14:
            break
    return best[1], best[2]


def orth_sym_factor(u, *, special: bool = True, tol: float = TAU_FACT) -> OrthSymResult:
    """Factor a unitary matrix as ``u = p @ phi``.

    ``p`` is real orthogonal and ``phi`` symmetric unitary. With
    ``u^T u = P1 diag(lam) P1^T`` we take ``D = sqrt(lam)`` on the principal
    branch (non-negative real part), ``phi = P1 D P1^T`` and
    ``p = u P1 conj(D) P1^T``.

    When ``special`` is set and ``det p = -1`` the sign of D is changed so that
    ``det p = 1``: for odd P by negating both factors, for even P by flipping
    the entry of D nearest the imaginary axis (a global sign cannot change the
    determinant there).
    """
    u = as_square(u, "u")
    n = u.shape[0]
    if unitarity_defect(u) > tol * max(1, n):
        raise NotUnitary("u is not unitary")
    m = u.T @ u
    m = 0.5 * (m + m.T)
    p1, lam = _real_orthogonal_eig(m)
    d = _principal_sqrt_phase(lam / np.abs(lam))
    p2 = (u @ p1) * d.conj()[None, :]
    if special and np.linalg.det(p2.real) * np.linalg.det(p1) < 0:
        if n % 2:
            d = -d
            p2 = -p2
        else:
            k = int(np.argmin(d.real))
            d[k] = -d[k]
            p2[:, k] = -p2[:, k]
    p = p2.real @ p1.T
    phi = (p1 * d[None, :]) @ p1.T
    return OrthSymResult(p=p, phi=0.5 * (phi + phi.T))


def mat_exp(a) -> np.ndarray:
    """Matrix exponential of a square matrix or a stack ``(..., n, n)``.

    Delegates to scipy's scaling-and-squaring Pade implementation.
    """
    arr = np.asarray(a, dtype=complex)
    if not np.all(np.isfinite(arr)):
        raise NonFinite("matrix exponential of non-finite input")
    if arr.ndim < 2 or arr.shape[-1] != arr.shape[-2]:
        raise ValueError(f"mat_exp needs square matrices, got shape {arr.shape}")
    return sla.expm(arr)


def hermitian_sqrt(h) -> np.ndarray:
    """Positive square root of a Hermitian positive semidefinite matrix."""
    h = np.asarray(h, dtype=complex)
    h = 0.5 * (h + h.conj().T)
    vals, vecs = np.linalg.eigh(h)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def unitary_log(u) -> np.ndarray:
    """Principal logarithm ``log(u) / i`` of a unitary matrix as a Hermitian matrix.

    Eigenphases are taken in (-pi, pi].
    """
    t, z = sla.schur(np.asarray(u, dtype=complex), output="complex")
    theta = np.angle(np.diag(t))
    theta = np.where(theta <= -np.pi + 1e-15, theta + 2 * np.pi, theta)
    h = (z * theta) @ z.conj().T
    return 0.5 * (h + h.conj().T)


def polar_unitary(m) -> np.ndarray:
    """Unitary polar factor of ``m`` (closest unitary in Frobenius norm)."""
    a, _, b = np.linalg.svd(np.asarray(m))
    return a @ b
