import warnings

import numpy as np
import pytest

from conftest import rand_hermitian, rand_reflector, rand_unitary
from mmstrip import core, forward as fw
from mmstrip import matfact as mf
from mmstrip.core import Layer, ModeSet
from mmstrip.errors import DegenerateWindow

DX = 1e-6


def smooth_phi(rng, p, scale=0.3):
    h = rand_hermitian(rng, p, scale).real
    return core.phi_from_sigma(0.5 * (h + h.T), 1.0)


def random_layers(rng, p, n, norm=0.4):
    return [Layer(smooth_phi(rng, p), rand_reflector(rng, p, norm), DX) for _ in range(n)]


def test_uniform_grid_and_window_shapes():
    om = fw.uniform_grid(2.0, 8, center=1.0)
    assert om.size == 9 and om[0] == -1.0 and om[-1] == 3.0
    for kind in ("rect", "raised-cosine", "gaussian"):
        w = fw.WindowFn(kind).weights(om)
        assert np.all(w >= 0) and w[4] == pytest.approx(1.0)
    rc = fw.WindowFn("raised-cosine").weights(om)
    assert rc[0] == pytest.approx(0.0, abs=1e-15) and rc[-1] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        fw.WindowFn("hann-ish")


def test_zero_layers_give_zero_reflection():
    m = ModeSet([1.45, 1.44])
    spec = fw.simulate_reflection([], m, fw.uniform_grid(1e14, 16))
    assert np.all(spec.r == 0)


def test_single_layer_is_delay_free(rng):
    m = ModeSet([1.45, 1.44, 1.43])
    rho = rand_reflector(rng, 3, 0.6)
    om = fw.uniform_grid(5e14, 32)
    spec = fw.simulate_reflection([Layer(np.eye(3), rho, DX)], m, om)
    np.testing.assert_allclose(spec.r, np.broadcast_to(rho, spec.r.shape), atol=1e-14)
    phi = smooth_phi(rng, 3)
    spec = fw.simulate_reflection([Layer(phi, rho, DX)], m, om)
    np.testing.assert_allclose(spec.r, np.broadcast_to(phi.T @ rho @ phi, spec.r.shape), atol=1e-13)


def test_recursion_matches_transfer_product(rng):
    m = ModeSet([1.45, 1.44])
    layers = random_layers(rng, 2, 5)
    om = fw.uniform_grid(3e14, 8)
    spec = fw.simulate_reflection(layers, m, om)
    for k, w in enumerate(om):
        t = core.compose([core.layer_transfer(layer, m, w) for layer in layers])
        np.testing.assert_allclose(spec.r[k], core.transfer_to_scattering(t).b11, atol=1e-12)


@pytest.mark.parametrize("p", [1, 2, 4])
def test_lossless_invariants(rng, p):
    m = ModeSet(np.linspace(1.45, 1.43, p))
    layers = random_layers(rng, p, 12, norm=0.6)
    om = fw.design_grid(m, DX, 12)
    spec = fw.simulate_reflection(layers, m, om, with_transmission=True)
    d = spec.physical_defects()
    assert np.max(d["reciprocity"]) < 1e-9
    assert np.max(d["unitarity"]) < 1e-9
    assert np.max(d["norm_r"]) < 1


def test_lossy_structure_is_not_unitary(rng):
    m = ModeSet([1.45, 1.44], loss=[500.0, 0.0])
    spec = fw.simulate_reflection(random_layers(rng, 2, 4), m, fw.uniform_grid(1e14, 16), with_transmission=True)
    d = spec.physical_defects()
    assert np.min(d["unitarity"]) > 1e-6
    assert np.max(d["reciprocity"]) < 1e-12


def test_threads_are_deterministic(rng):
    m = ModeSet([1.45, 1.44])
    layers = random_layers(rng, 2, 6)
    om = fw.uniform_grid(2e14, 64)
    a = fw.simulate_reflection(layers, m, om, threads=1).r
    b = fw.simulate_reflection(layers, m, om, threads=3).r
    assert np.array_equal(a, b)


def test_coupled_methods_agree_for_thin_sections(rng):
    p, n, dx = 2, 40, 2e-6
    m = ModeSet([1.45, 1.44], period=5.35e-7, omega_ref=2 * np.pi * core.C_LIGHT / 1.55e-6)
    x = np.arange(n)
    kappas = np.array([-0.5j * 300 * np.sin(np.pi * (j + 0.5) / n) * np.array([[1.0, 0.2], [0.2, 0.8]]) for j in x])
    sigmas = np.array([np.diag([50.0, -30.0]) + 20.0 * np.array([[0, 1], [1, 0]]) for _ in x]).astype(complex)
    om = fw.uniform_grid(5e12, 16)
    exact = fw.simulate_coupled(kappas, sigmas, dx, m, om, method="exact").r
    split = fw.simulate_coupled(kappas, sigmas, dx, m, om, method="split").r
    layered = fw.simulate_coupled(kappas, sigmas, dx, m, om, method="layered").r
    scale = np.max(np.abs(exact))
    assert np.max(np.abs(split - exact)) < 1e-3 * scale
    assert np.max(np.abs(layered - exact)) < 5e-2 * scale
    with pytest.raises(ValueError):
        fw.simulate_coupled(kappas, sigmas, dx, m, om, method="rk4")


def test_h0_of_constant_spectrum_is_exact(rng):
    y = rand_reflector(rng, 3, 0.5)
    om = fw.uniform_grid(1.0, 20)
    spec = fw.SpectrumGrid(om, np.broadcast_to(y, (om.size, 3, 3)))
    for kind in ("rect", "raised-cosine", "gaussian"):
        np.testing.assert_allclose(fw.zeroth_impulse_weight(spec, fw.WindowFn(kind)), y, atol=1e-15)


def test_degenerate_window():
    spec = fw.SpectrumGrid(fw.uniform_grid(1.0, 1), np.zeros((2, 1, 1)))
    with pytest.raises(DegenerateWindow):
        fw.zeroth_impulse_weight(spec, fw.WindowFn("raised-cosine"))


def test_low_bandwidth_warns():
    m = ModeSet([1.45])
    spec = fw.SpectrumGrid(fw.uniform_grid(1e12, 8), np.zeros((9, 1, 1)), m)
    with pytest.warns(UserWarning, match="bandwidth"):
        fw.zeroth_impulse_weight(spec, fw.WindowFn("rect"), dx=DX)
    om = fw.design_grid(m, DX, 4)
    spec = fw.SpectrumGrid(om, np.zeros((om.size, 1, 1)), m)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fw.zeroth_impulse_weight(spec, fw.WindowFn("rect"), dx=DX)


def test_design_grid_rule():
    m = ModeSet([1.45, 1.40])
    om = fw.design_grid(m, DX, 50)
    mm = om.size - 1
    assert mm & (mm - 1) == 0 and mm >= 400
    assert fw.bandwidth_ratio(0.5 * (om[-1] - om[0]), m, DX) == pytest.approx(20.0)


def test_impulse_response_basics(rng):
    om = fw.uniform_grid(1.0, 32)
    zero = fw.SpectrumGrid(om, np.zeros((om.size, 2, 2)))
    assert np.all(fw.impulse_response(zero, [0.0, 1.0, 2.0]) == 0)
    rho = rand_reflector(rng, 2, 0.5)
    single = fw.SpectrumGrid(om, np.broadcast_to(rho, (om.size, 2, 2)))
    h = fw.impulse_response(single, [0.0], fw.WindowFn("rect"))
    np.testing.assert_allclose(h[0], rho, atol=1e-15)
    np.testing.assert_allclose(h[0], fw.zeroth_impulse_weight(single, fw.WindowFn("rect")), atol=1e-15)


def test_two_layer_pulse_arrival_times():
    """Each element peaks at the round trip n_p dx/c + n_q dx/c of its single-bounce path."""
    n = np.array([1.5, 1.2])
    m = ModeSet(n)
    rho0 = np.diag([0.3, 0.2]).astype(complex)
    rho1 = np.array([[0.2, 0.15], [0.15, 0.25]], dtype=complex)
    layers = [Layer(np.eye(2), rho0, DX), Layer(np.eye(2), rho1, DX)]
    om = fw.design_grid(m, DX, 2, ratio=60, min_points=4096)
    spec = fw.simulate_reflection(layers, m, om)
    dt = m.delays(DX)
    t0 = np.sqrt(1 - np.diag(rho0).real ** 2)
    win = fw.WindowFn("gaussian", 0.3)
    for p in range(2):
        for q in range(2):
            tau = dt[p] + dt[q]
            # single-bounce amplitude with a diagonal first reflector
            amp = t0[p] * rho1[p, q] * t0[q]
            h = fw.impulse_response(spec, [tau], win)[0, p, q]
            assert abs(h - amp) < 0.02 * abs(amp)
    # nothing arrives before the first reflection
    times = -np.linspace(3, 10, 8) * dt.min()
    h = fw.impulse_response(spec, times, win)
    assert np.max(np.abs(h)) < 1e-3 * np.max(np.abs(spec.r))
