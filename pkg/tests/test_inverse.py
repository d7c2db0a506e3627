import numpy as np
import pytest

from conftest import rand_reflector, rand_unitary, smooth_b_truth
from mmstrip import core, forward as fw, grating as gr
from mmstrip import inverse as inv
from mmstrip import matfact as mf
from mmstrip.core import Layer, ModeSet
from mmstrip.errors import AsymmetricInput, TooStrong

DX = 1e-6
GAUSS = fw.WindowFn("gaussian", 0.16)


def cfg(n, situation="b", **kw):
    kw.setdefault("window", GAUSS)
    return inv.InverseConfig(n_layers=n, dx=DX, situation=situation, **kw)


def test_situation_parse():
    assert inv.Situation.parse("a") is inv.Situation.A
    assert inv.Situation.parse("C") is inv.Situation.C
    with pytest.raises(ValueError):
        inv.Situation.parse("d")


def test_config_validation():
    with pytest.raises(ValueError):
        inv.InverseConfig(n_layers=0, dx=DX)
    with pytest.raises(ValueError):
        inv.InverseConfig(n_layers=1, dx=DX, index_correction=True)
    with pytest.raises(ValueError):
        inv.ContinuityConfig(sv_zero_threshold=0)


def test_schur_step_cancels_single_layer(rng):
    m = ModeSet([1.45, 1.44])
    layer = Layer(mf.orth_sym_factor(rand_unitary(rng, 2)).phi, rand_reflector(rng, 2, 0.5), DX)
    om = fw.uniform_grid(1e14, 16)
    spec = fw.simulate_reflection([layer], m, om)
    out = inv.schur_step(spec, layer)
    assert np.max(np.abs(out.r)) < 1e-14


def test_schur_step_two_layers(rng):
    m = ModeSet([1.45, 1.44, 1.42])
    layers = [Layer(mf.orth_sym_factor(rand_unitary(rng, 3)).phi, rand_reflector(rng, 3, 0.4), DX)
              for _ in range(2)]
    om = fw.uniform_grid(3e14, 32)
    out = inv.schur_step(fw.simulate_reflection(layers, m, om), layers[0])
    ref = fw.simulate_reflection(layers[1:], m, om)
    assert np.max(np.abs(out.r - ref.r)) < 1e-10


def test_schur_step_pure_delay(rng):
    m = ModeSet([1.45, 1.44])
    om = fw.uniform_grid(2e14, 8)
    r = np.array([rand_reflector(rng, 2, 0.3) for _ in om])
    out = inv.schur_step(fw.SpectrumGrid(om, r, m), Layer.identity(2, DX))
    z = np.exp(-1j * m.beta(om) * DX)
    np.testing.assert_allclose(out.r, z[:, :, None] * r * z[:, None, :], atol=1e-15)


def test_identify_situation_a():
    h0 = np.array([[0, 0.2], [0.2, 0]], dtype=complex)
    rho, phi, _ = inv.identify_layer(h0, cfg(1, "a"))
    np.testing.assert_array_equal(rho, h0)
    np.testing.assert_array_equal(phi, np.eye(2))


def test_identify_situation_b(rng):
    u = rand_unitary(rng, 2)
    h0 = u.T @ np.diag([0.4, 0.1]) @ u
    rho, phi, rep = inv.identify_layer(h0, cfg(1, "b"))
    np.testing.assert_allclose(np.sort(np.diag(rho).real)[::-1], [0.4, 0.1], atol=1e-13)
    np.testing.assert_allclose(phi.T @ rho @ phi, h0, atol=1e-13)
    # with a nearby previous factor the row signs follow it exactly
    prev = inv._Prev(sigma=np.array([0.4, 0.1]), phi=u * (1 + 1e-3))
    rho, phi, _ = inv.identify_layer(h0, cfg(1, "b"), prev)
    np.testing.assert_allclose(np.diag(rho).real, [0.4, 0.1], atol=1e-13)
    np.testing.assert_allclose(phi, u, atol=1e-12)


@pytest.mark.parametrize("sign", ["auto", "positive"])
def test_identify_situation_c(rng, sign):
    sigma = rng.standard_normal((2, 2))
    sigma = 0.5 * (sigma + sigma.T)
    phi_true = core.phi_from_sigma(sigma, 0.05)
    rho_true = np.diag([0.3, 0.05])
    h0 = phi_true.T @ rho_true @ phi_true
    rho, phi, _ = inv.identify_layer(h0, cfg(1, "c", rho_sign=sign))
    np.testing.assert_allclose(rho, rho_true, atol=1e-9)
    np.testing.assert_allclose(phi, phi_true, atol=1e-9)


def test_identify_situation_c_negative(rng):
    sigma = rng.standard_normal((3, 3))
    sigma = 0.5 * (sigma + sigma.T)
    phi_true = core.phi_from_sigma(sigma, 0.05)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    rho_true = -q @ np.diag([0.3, 0.2, 0.05]) @ q.T
    h0 = phi_true.T @ rho_true @ phi_true
    rho, phi, rep = inv.identify_layer(h0, cfg(1, "c", rho_sign="negative"))
    assert rep.rho_sign == "negative"
    np.testing.assert_allclose(rho, rho_true, atol=1e-9)
    np.testing.assert_allclose(phi, phi_true, atol=1e-9)


def test_identify_errors():
    with pytest.raises(TooStrong):
        inv.identify_layer(np.array([[1.0]]), cfg(1, "a"))
    with pytest.raises(AsymmetricInput):
        inv.identify_layer(np.array([[0.1, 0.2], [0.0, 0.1]]), cfg(1, "a"))


@pytest.mark.parametrize("situation", ["a", "b", "c"])
def test_strip_single_layer(rng, situation):
    m = ModeSet([1.45, 1.44])
    if situation == "a":
        layer = Layer(np.eye(2), rand_reflector(rng, 2, 0.5), DX)
    elif situation == "b":
        layer = Layer(np.eye(2), np.diag([0.4, 0.2]).astype(complex), DX)
    else:
        layer = Layer(core.phi_from_sigma(np.array([[0.3, 0.1], [0.1, -0.2]]), 0.1),
                      np.array([[0.3, 0.05], [0.05, 0.1]], dtype=complex), DX)
    spec = fw.simulate_reflection([layer], m, fw.design_grid(m, DX, 1))
    layers, diag = inv.layer_strip(spec, cfg(1, situation, rho_sign="positive"))
    np.testing.assert_allclose(layers[0].rho, layer.rho, atol=1e-10)
    np.testing.assert_allclose(layers[0].phi, layer.phi, atol=1e-10)
    assert diag.flagged_layers == []


def test_strip_ten_layer_situation_b(rng):
    m = ModeSet([1.45, 1.44, 1.43])
    truth = smooth_b_truth(rng, 3, 10, DX)
    spec = fw.simulate_reflection(truth, m, fw.design_grid(m, DX, 10))
    layers, diag = inv.layer_strip(spec, cfg(10, "b"))
    for a, b in zip(layers, truth):
        assert np.max(np.abs(a.rho - b.rho)) < 1e-6
        assert np.max(np.abs(a.phi - b.phi)) < 1e-6
    assert diag.residual_h0_norm < 1e-3 * np.max(np.abs(spec.r))


def test_strip_error_carries_layer_index():
    m = ModeSet([1.45])
    om = fw.uniform_grid(1e14, 8)
    r = np.full((om.size, 1, 1), 0.2, dtype=complex)
    r[:, 0, 0] += 0.9 * np.exp(1j * om / om[-1])
    spec = fw.SpectrumGrid(om, r, m)
    with pytest.raises(inv.NumericalError) as info:
        inv.layer_strip(spec, cfg(3, "a", window=fw.WindowFn("rect")))
    assert info.value.layer is not None


def test_index_correction_factors():
    m = ModeSet([1.5, 1.4])
    f = inv.index_correction_factors(m, 1.45)
    np.testing.assert_allclose(f, [[3.0 / 2.9, 1.0], [1.0, 2.8 / 2.9]])


def test_born_leading_edge():
    m = ModeSet([1.45, 1.44])
    np.testing.assert_array_equal(inv.born_leading_edge(np.zeros((2, 2)), m), 0)
    m1 = ModeSet([1.45])
    h0 = np.array([[1j * 0.5 * m1.c / (2 * 1.45)]])
    assert inv.born_leading_edge(h0, m1)[0, 0] == pytest.approx(0.5)


def test_born_leading_edge_grating_entrance():
    prof = gr.example_profile_sec5()
    kappa, _ = gr.coupling_at(prof, 0)
    n = prof.modes.n
    h = 1j * kappa.conj() * prof.modes.c / (n[:, None] + n[None, :])
    np.testing.assert_allclose(inv.born_leading_edge(h, prof.modes), kappa, rtol=1e-12, atol=1e-20)
    np.testing.assert_allclose(kappa, -0.5j * prof.dn_ac[0] * prof.eta, rtol=1e-12)
