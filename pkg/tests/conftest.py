import numpy as np
import pytest


def rand_complex(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def rand_symmetric(rng, p, scale=1.0):
    a = rand_complex(rng, p, p)
    return scale * 0.5 * (a + a.T)


def rand_unitary(rng, p):
    q, r = np.linalg.qr(rand_complex(rng, p, p))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def rand_hermitian(rng, p, scale=1.0):
    a = rand_complex(rng, p, p)
    return scale * 0.5 * (a + a.conj().T)


def rand_reflector(rng, p, norm=0.5):
    """Random complex symmetric matrix with spectral norm ``norm``."""
    s = rand_symmetric(rng, p)
    return norm * s / np.linalg.norm(s, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def smooth_b_truth(rng, p, n, dx, zero_at=None):
    """Situation-B structure: diagonal reflectors with distinct values, slowly varying unitaries.

    The first unitary starts near I. ``zero_at`` plants a zero singular value.
    """
    from mmstrip import core

    h = rng.standard_normal((p, p))
    u0 = core.phi_from_sigma(0.15 * (h + h.T), 1.0)
    gen = rng.standard_normal((p, p))
    gen = 0.5 * (gen + gen.T)
    layers = []
    for j in range(n):
        phi = core.phi_from_sigma(0.02 * j * gen, 1.0) @ u0
        s = np.linspace(0.35, 0.1, p) * (1 + 0.1 * np.sin(0.3 * j))
        if j == zero_at:
            s[-1] = 0.0
        layers.append(core.Layer(phi, np.diag(s).astype(complex), dx))
    return layers
