import numpy as np
import pytest

from risloc.channel import (CascadedModel, CouplingError, McModel, RadioConfig, RisProfileSet,
                            build_supports, cascaded_channel, channel_gain, dbm_to_watt,
                            ff_steering, mc_profile_apply, nf_steering, scattering_matrix,
                            simulate_observation, solve_coupled)
from risloc.geometry import Aod2D, LocalSpherical, RisGeometry, element_positions, position_from_spherical

from conftest import S_DIR, TABLE_BS, TABLE_RIS, TABLE_UE, make_scenario

K = 2 * np.pi / 0.01


def brute_supports(geom):
    """Tiers from pairwise element distances (independent of the index arithmetic)."""
    p = element_positions(geom)
    d = np.linalg.norm(p[:, None] - p[None], axis=2) / geom.spacing
    return [np.isclose(d, 0), np.isclose(d, 1), np.isclose(d, np.sqrt(2))]


def dense_S(geom, coeffs):
    S = np.zeros((geom.num_elements,) * 2, dtype=complex)
    for s_i, A in zip(coeffs, brute_supports(geom)):
        for k in range(S.shape[0]):
            for l in range(S.shape[1]):
                if A[k, l]:
                    S[k, l] += s_i
    return S


def test_center_element_of_odd_grid_is_one():
    g = RisGeometry(3, 3, 0.005, center=TABLE_RIS)
    for p in (TABLE_UE, TABLE_BS, TABLE_RIS + [0.1, -0.3, 0.2]):
        assert nf_steering(p, g, K)[4] == 1.0


def test_steering_unit_modulus():
    g = RisGeometry(16, 16, 0.005, center=TABLE_RIS)
    np.testing.assert_allclose(np.abs(nf_steering(TABLE_UE, g, K)), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.abs(ff_steering(Aod2D(0.7, 0.3), g, K)), 1.0, atol=1e-12)


def test_steering_rejects_coincident_point():
    g = RisGeometry(2, 2, 0.005, center=TABLE_RIS)
    with pytest.raises(ValueError):
        nf_steering(element_positions(g)[0], g, K)


def test_ff_boresight_all_ones():
    g = RisGeometry(5, 5, 0.005, center=TABLE_RIS)
    np.testing.assert_allclose(ff_steering(Aod2D(0.0, 0.0), g, K), np.ones(25), atol=1e-15)


def test_ff_conjugate_symmetry():
    g = RisGeometry(4, 5, 0.005)
    a = ff_steering(Aod2D(0.6, 0.4), g, K)
    b = ff_steering(Aod2D(0.6, 0.4 + np.pi - 2 * np.pi), g, K)  # (-ux, -uy, uz)
    np.testing.assert_allclose(b, a.conj(), atol=1e-12)


def test_nf_approaches_ff_in_far_field():
    g = RisGeometry(6, 6, 0.005, center=TABLE_RIS)
    aod = Aod2D(0.9, -0.4)
    d = 1e4 * g.fraunhofer_distance(0.01)
    p = position_from_spherical(LocalSpherical(aod, d), g)
    dev = np.abs(np.angle(nf_steering(p, g, K) * ff_steering(aod, g, K).conj()))
    assert dev.max() < 1e-3


def test_support_counts_2x2():
    A = build_supports(RisGeometry(2, 2, 0.005), 3)
    assert [a.nnz for a in A] == [4, 8, 4]


def test_supports_1x1():
    A = build_supports(RisGeometry(1, 1, 0.005), 3)
    assert A[0].toarray().tolist() == [[True]]
    assert A[1].nnz == 0 and A[2].nnz == 0


def test_supports_48_axis_count():
    A = build_supports(RisGeometry(48, 48, 0.005), 3)
    assert A[1].nnz == 2 * (2 * 48 * 47) == 9024


@pytest.mark.parametrize("m1,m2", [(1, 1), (2, 2), (3, 4), (5, 5), (6, 6)])
def test_supports_match_pairwise_distances(m1, m2):
    g = RisGeometry(m1, m2, 0.005)
    A = build_supports(g, 3)
    for a, b in zip(A, brute_supports(g)):
        np.testing.assert_array_equal(a.toarray(), b)
        assert (a != a.T).nnz == 0
    total = sum(a.astype(int) for a in A).toarray()
    assert total.max() <= 1


def test_too_many_tiers():
    with pytest.raises(ValueError):
        build_supports(RisGeometry(2, 2, 0.005), 4)


def test_scattering_matrix_examples():
    g1 = RisGeometry(1, 1, 0.005)
    assert scattering_matrix(McModel(build_supports(g1, 1), [0.3 + 0.1j])).toarray()[0, 0] == 0.3 + 0.1j
    g = RisGeometry(2, 2, 0.005)
    sup = build_supports(g, 3)
    assert scattering_matrix(McModel(sup, np.zeros(3))).nnz == 0 or \
        not np.any(scattering_matrix(McModel(sup, np.zeros(3))).toarray())
    S = scattering_matrix(McModel(sup, 0.05 * S_DIR)).toarray()
    np.testing.assert_allclose(S, dense_S(g, 0.05 * S_DIR), atol=0)
    np.testing.assert_array_equal(S, S.T)


def test_scattering_length_mismatch():
    with pytest.raises(ValueError):
        McModel(build_supports(RisGeometry(2, 2, 0.005), 3), [0.1, 0.2])


def test_mc_profile_apply_zero_coupling():
    g = RisGeometry(4, 4, 0.005, center=TABLE_RIS)
    rng = np.random.default_rng(3)
    ph = rng.uniform(-np.pi, np.pi, 16)
    a_b, a_u = nf_steering(TABLE_BS, g, K), nf_steering(TABLE_UE, g, K)
    S = scattering_matrix(McModel(build_supports(g, 3), np.zeros(3)))
    _, h = mc_profile_apply(ph, S, a_b, a_u)
    assert h == pytest.approx(np.sum(a_u * np.exp(1j * ph) * a_b), abs=1e-12)


def test_mc_profile_apply_scalar():
    sup = build_supports(RisGeometry(1, 1, 0.005), 1)
    w, s0 = 0.7, 0.2 - 0.1j
    z, h = mc_profile_apply([w], scattering_matrix(McModel(sup, [s0])), [1.0], [1.0])
    assert h == pytest.approx(1 / (np.exp(-1j * w) - s0), abs=1e-14)


@pytest.mark.parametrize("m", [1, 2, 3, 4, 5, 6])
@pytest.mark.parametrize("q", [0.05, 0.3])
def test_mc_profile_apply_matches_dense_inverse(m, q):
    g = RisGeometry(m, m, 0.005, center=TABLE_RIS)
    rng = np.random.default_rng(m)
    ph = rng.uniform(-np.pi, np.pi, m * m)
    s = q * S_DIR
    a_b, a_u = nf_steering(TABLE_BS, g, K), nf_steering(TABLE_UE, g, K)
    z, h = mc_profile_apply(ph, scattering_matrix(McModel(build_supports(g, 3), s)), a_b, a_u)
    Omega_eff = np.linalg.inv(np.diag(np.exp(-1j * ph)) - dense_S(g, s))
    ref = a_u @ Omega_eff @ a_b
    assert abs(h - ref) <= 1e-10 * abs(ref)
    M = np.eye(m * m) - dense_S(g, s) @ np.diag(np.exp(1j * ph))
    assert np.linalg.norm(M @ z - a_b) < 1e-10 * np.linalg.norm(a_b)


def test_singular_coupling_detected():
    sup = build_supports(RisGeometry(1, 1, 0.005), 1)
    # Omega^{-1} - S = 0 exactly
    with pytest.raises(CouplingError):
        solve_coupled(scattering_matrix(McModel(sup, [1.0])), np.ones((1, 1)), np.ones(1))


def test_cascaded_zero_mc_equals_compact_form(desk):
    sc, sup = desk
    g, k = sc.geom, sc.radio.wavenumber
    h = cascaded_channel(sc.ue_position, sc.bs_position, g, sc.profiles, McModel(sup, np.zeros(3)), k)
    b = nf_steering(sc.ue_position, g, k) * nf_steering(sc.bs_position, g, k)
    np.testing.assert_allclose(h, b @ sc.profiles.W, atol=1e-12)
    assert np.vdot(h, h).real <= g.num_elements ** 2 * sc.radio.num_pilots


def test_cascaded_linear_in_bs_steering(desk):
    sc, sup = desk
    model = CascadedModel(sc, sup)
    s = 0.05 * S_DIR
    h = model.channel(sc.ue_position, s)
    alpha = 0.37
    X = solve_coupled(model.scattering(s), model.W, np.exp(1j * alpha) * model.a_b)
    h2 = (model.W * X).T @ model.steering(sc.ue_position)
    np.testing.assert_allclose(h2, np.exp(1j * alpha) * h, rtol=1e-12)


def neumann_errors(sc, sup, qs):
    model = CascadedModel(sc, sup)
    h0 = model.channel(sc.ue_position)
    G = model.mc_sensitivity(sc.ue_position)
    return [np.linalg.norm(model.channel(sc.ue_position, q * S_DIR) - (h0 + G @ (q * S_DIR)))
            for q in qs]


def test_neumann_quadratic_decay(desk):
    sc, sup = desk
    e = neumann_errors(sc, sup, [0.01, 0.02, 0.04])
    for lo, hi in zip(e[:-1], e[1:]):
        assert 3.2 <= hi / lo <= 4.8


def test_neumann_error_bound(desk):
    sc, sup = desk
    model = CascadedModel(sc, sup)
    h = model.channel(sc.ue_position, 0.05 * S_DIR)
    err = neumann_errors(sc, sup, [0.05])[0]
    S_norm = abs(model.scattering(0.05 * S_DIR)).sum(axis=1).max()  # ||S Omega||_inf
    assert err / np.linalg.norm(h) < 10 * S_norm ** 2


def test_channel_gain_table_value():
    radio = RadioConfig(tx_power_dbm=0.0)
    g = channel_gain(radio, TABLE_UE, TABLE_RIS, TABLE_BS)
    d1, d2 = np.sqrt(53.25), np.sqrt(25.25)
    hand = 1e-4 * np.sqrt(1e-3) / (16 * np.pi ** 2 * d1 * d2)
    assert abs(g.beta) == pytest.approx(hand, rel=1e-12)
    assert abs(g.beta) == pytest.approx(5.461e-10, rel=1e-3)


def test_channel_gain_scaling():
    r0, r20 = RadioConfig(tx_power_dbm=0.0), RadioConfig(tx_power_dbm=20.0)
    b = abs(channel_gain(r0, TABLE_UE, TABLE_RIS, TABLE_BS).beta)
    assert abs(channel_gain(r20, TABLE_UE, TABLE_RIS, TABLE_BS).beta) == pytest.approx(10 * b, rel=1e-12)
    far_u = TABLE_RIS + 2 * (TABLE_UE - TABLE_RIS)
    far_b = TABLE_RIS + 2 * (TABLE_BS - TABLE_RIS)
    assert abs(channel_gain(r0, far_u, TABLE_RIS, far_b).beta) == pytest.approx(b / 4, rel=1e-12)
    gp = channel_gain(r0, TABLE_UE, TABLE_RIS, TABLE_BS, phase_offset=1.1)
    assert np.angle(gp.beta) == pytest.approx(1.1)


def test_noise_variance_conventions():
    r = RadioConfig()
    assert r.noise_var == pytest.approx(dbm_to_watt(-173.855), rel=1e-12)
    rb = RadioConfig(noise_includes_bandwidth=True)
    assert rb.noise_var == pytest.approx(1e6 * r.noise_var, rel=1e-12)
    assert r.wavelength == pytest.approx(0.01, rel=1e-12)


def test_simulate_noiseless_and_reproducible(desk):
    sc, sup = desk
    mc = McModel(sup, 0.01 * S_DIR)
    o = simulate_observation(sc, mc, seed=5, noise_var=0.0)
    h = cascaded_channel(sc.ue_position, sc.bs_position, sc.geom, sc.profiles, mc, sc.radio.wavenumber)
    np.testing.assert_array_equal(o.y, o.beta * h)
    a, b = simulate_observation(sc, mc, seed=9), simulate_observation(sc, mc, seed=9)
    assert a.y.tobytes() == b.y.tobytes()
    assert len(a.y) == sc.radio.num_pilots


def test_noise_variance_empirical():
    sc, sup = make_scenario(2, TABLE_UE, n_t=1000)
    mc = McModel(sup, np.zeros(3))
    clean = simulate_observation(sc, mc, seed=0, noise_var=0.0)
    samples = np.concatenate([simulate_observation(sc, mc, seed=s, phase_offset=clean.meta["phase_offset"]).y
                              - clean.y for s in range(100)])
    assert samples.size == 100_000
    assert np.mean(np.abs(samples) ** 2) == pytest.approx(sc.radio.noise_var, rel=0.02)


def test_profile_set_unit_modulus():
    p = RisProfileSet.random(9, 4, np.random.default_rng(0))
    assert np.all(np.abs(p.phases) <= np.pi)
    np.testing.assert_allclose(np.abs(p.W), 1.0)
