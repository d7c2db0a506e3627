import math

import numpy as np
import pytest

from mmstrip import core, forward as fw, grating as gr
from mmstrip.core import Layer, ModeSet
from mmstrip.errors import BranchOverflow, UnderdeterminedFit

ETA2 = np.array([[900.0, 150.0], [150.0, 600.0]])


def two_mode_profile(n=50, dx=20e-6, seed=0):
    rng = np.random.default_rng(seed)
    x = (np.arange(n) + 0.5) * dx
    u = x / x[-1]
    return gr.GratingProfile(
        x,
        4e-4 * np.sin(np.pi * u) ** 2 + 1e-5 * rng.uniform(0, 1, n),
        2e-4 * np.cos(3 * u),
        3e3 * (u - 0.5),
        ETA2,
        ModeSet([1.45, 1.44], period=5.35e-7),
        dx,
    )


def test_coupling_zero_profile():
    prof = gr.GratingProfile([0.0], 0.0, 0.0, 0.0, ETA2, ModeSet([1.45, 1.44]), 1e-5)
    k, s = gr.coupling_at(prof, 0)
    assert np.all(k == 0) and np.all(s == 0)


def test_coupling_example_values():
    eta = gr.eta_from_library("sec5-four-mode")
    prof = gr.GratingProfile([0.0], 1e-3, 0.0, 0.0, eta, gr.sec5_modes(), 1e-5)
    k, _ = gr.coupling_at(prof, 0)
    np.testing.assert_allclose(k, -5e-4j * eta, rtol=1e-15)
    rate = gr.sec5_theta_rate(gr.SEC5_LENGTH, slope=gr.SEC5_CHIRP_LITERAL)
    prof = gr.GratingProfile([gr.SEC5_LENGTH], 0.0, 0.0, rate, eta, gr.sec5_modes(), 1e-5)
    _, s = gr.coupling_at(prof, 0)
    expect = -(math.pi / 16) * 1e4 * (gr.SEC5_LENGTH / 2)
    np.testing.assert_allclose(np.diag(s).real, expect, rtol=1e-14)


def test_coupling_structure_invariants():
    prof = two_mode_profile()
    kappas, sigmas = gr.coupling_arrays(prof)
    for k, s in zip(kappas, sigmas):
        ik = 1j * k
        assert np.allclose(ik, ik.conj().T)
        assert np.min(np.linalg.eigvalsh(ik)) >= -1e-12
        assert np.all(s.imag == 0) and np.allclose(s, s.T)


def test_eta_validation():
    with pytest.raises(ValueError):
        gr.validate_eta([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        gr.validate_eta([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(KeyError):
        gr.eta_from_library("nope")


def test_layers_from_zero_profile():
    prof = gr.GratingProfile(np.arange(3) * 1e-5, 0.0, 0.0, 0.0, ETA2, ModeSet([1.45, 1.44]), 1e-5)
    for layer in gr.layers_from_profile(prof):
        assert np.all(layer.rho == 0)
        np.testing.assert_allclose(layer.phi, np.eye(2), atol=1e-15)


def test_scalar_reflector_magnitude():
    q, dx = 400.0, 5e-4
    prof = gr.GratingProfile([0.0], 2 * q / 500.0, 0.0, 0.0, [[500.0]], ModeSet([1.45]), dx)
    (layer,) = gr.layers_from_profile(prof)
    assert abs(layer.rho[0, 0]) == pytest.approx(math.tanh(q * dx), rel=1e-14)


def test_strong_coupling_warns():
    prof = gr.GratingProfile([0.0], 2.0, 0.0, 0.0, [[1.0]], ModeSet([1.45]), 0.5)
    with pytest.warns(UserWarning, match="kappa"):
        gr.layers_from_profile(prof)


def test_profile_roundtrip_identity():
    prof = two_mode_profile()
    fit = gr.profile_from_layers(gr.layers_from_profile(prof), prof.eta, prof.modes, x=prof.x)
    got = fit.profile
    # identity measured on the coupling matrices (1/m)
    k0, s0 = gr.coupling_arrays(prof)
    k1, s1 = gr.coupling_arrays(got)
    assert np.max(np.abs(k1 - k0)) < 1e-10
    assert np.max(np.abs(s1 - s0)) < 1e-10
    assert np.max(fit.ac_residual) < 1e-12 * np.max(np.abs(prof.eta))
    assert np.max(fit.dc_residual) < 1e-12 * np.max(np.abs(prof.eta))


def test_profile_residual_matches_normal_equations():
    eta = np.diag([800.0, 500.0, 300.0])
    dx = 1e-5
    kdiag = np.array([0.3, 0.1, 0.25]) * 1e-3 * np.diag(eta) / 2  # not proportional to eta_pp
    kappa = -1j * np.diag(kdiag)
    layer = Layer(np.eye(3), core.reflector_from_kappa(kappa, dx), dx)
    fit = gr.profile_from_layers([layer], eta, ModeSet([1.45, 1.44, 1.43]), fit_dc=False, fit_chirp=False)
    a = np.diag(eta) / 2
    coef = np.dot(a, kdiag) / np.dot(a, a)
    misfit = np.linalg.norm(kdiag - a * coef)
    assert fit.profile.dn_ac[0] == pytest.approx(coef, rel=1e-9)
    assert fit.ac_residual[0] == pytest.approx(misfit, rel=1e-7)
    assert fit.ac_residual[0] > 0


def test_fit_errors():
    layer = Layer(np.eye(1), np.zeros((1, 1)), 1e-5)
    with pytest.raises(UnderdeterminedFit):
        gr.profile_from_layers([layer], [[1.0]], ModeSet([1.45]))
    gr.profile_from_layers([layer], [[1.0]], ModeSet([1.45]), fit_dc=False)
    bad = Layer(np.diag([-1.0, 1.0]).astype(complex), np.zeros((2, 2)), 1e-5)
    with pytest.raises(BranchOverflow):
        gr.profile_from_layers([bad], ETA2, ModeSet([1.45, 1.44]))


def test_align_sections_averages_neighbours():
    prof = two_mode_profile(n=5)
    layers = gr.layers_from_profile(prof)
    plain = gr.profile_from_layers(layers, prof.eta, prof.modes).profile
    aligned = gr.profile_from_layers(layers, prof.eta, prof.modes, align_sections=True).profile
    np.testing.assert_allclose(aligned.dn_dc[:-1], 0.5 * (plain.dn_dc[:-1] + plain.dn_dc[1:]))
    assert aligned.dn_dc[-1] == plain.dn_dc[-1]
    np.testing.assert_array_equal(aligned.dn_ac, plain.dn_ac)


def test_example_profile_parameters():
    prof = gr.example_profile_sec5()
    assert prof.n_samples == 2000 and prof.dx == 10e-6
    assert gr.sec5_dn_ac(0.0) == 0.0
    assert gr.sec5_dn_ac(gr.SEC5_LENGTH) == pytest.approx(0.0, abs=1e-18)
    assert gr.sec5_dn_ac(gr.SEC5_LENGTH / 2) == pytest.approx(1e-3)
    assert gr.sec5_dn_dc(gr.SEC5_LENGTH / 2) == pytest.approx(5e-4)
    k0 = 2 * math.pi / 1.55e-6
    expect = k0 * np.array([[0.957, 0, 0, -0.116], [0, 0.874, 0, 0], [0, 0, 0.707, 0], [-0.116, 0, 0, 0.491]])
    np.testing.assert_allclose(prof.eta, expect, rtol=1e-15)
    for p, q in ((0, 1), (0, 2), (1, 3), (2, 3), (1, 2)):
        assert prof.eta[p, q] == 0
    n0 = 0.5 * (1.449 + 1.437)
    assert prof.modes.period == pytest.approx(1.55e-6 / (2 * n0))


def test_envelope_gauge_is_a_global_phase():
    """Removing the carrier is equivalent to a phase ramp on the reflectors."""
    prof = two_mode_profile(n=30)
    layers = gr.layers_from_profile(prof)
    lam = prof.modes.period
    om = fw.uniform_grid(2e13, 32)
    carrier = fw.simulate_reflection(layers, prof.modes, om).r
    plain_modes = ModeSet(prof.modes.n)
    ramped = [Layer(l.phi, l.rho * np.exp(-2j * np.pi * j * l.dx / lam), l.dx) for j, l in enumerate(layers)]
    plain = fw.simulate_reflection(ramped, plain_modes, om).r
    ratio = carrier / plain
    ref = ratio[:, 0, 0]
    np.testing.assert_allclose(np.abs(ref), 1.0, atol=1e-9)
    np.testing.assert_allclose(ratio, np.broadcast_to(ref[:, None, None], ratio.shape), atol=1e-9)
