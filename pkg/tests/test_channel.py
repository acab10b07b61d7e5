import dataclasses

import numpy as np
import pytest

from mddcf.config import SystemConfig, InterferenceProfile, SimulationConfig
from mddcf.channel import (
    generate_layout, path_loss_db, large_scale, generate_channels,
    predict_channels, partition_subcarriers, to_frequency,
    save_channels, load_channels,
)


def small_system(**kw):
    base = dict(num_aps=3, num_ms=2, antennas_per_ap=4,
                dl_subcarriers=8, ul_subcarriers=4, total_subcarriers=12,
                delay_taps=4, cell_length=400.0, duplex_mode="mdd")
    base.update(kw)
    return SystemConfig(**base)


PROFILE = InterferenceProfile(si_ap=10 ** -7.2, si_ms=10 ** -4.2,
                              iai=1e-13, imi=1e-12)


def test_layout_within_square_and_deterministic():
    cfg = small_system()
    a = generate_layout(cfg, np.random.default_rng(7))
    b = generate_layout(cfg, np.random.default_rng(7))
    assert a.ap_positions.shape == (3, 2)
    assert a.ms_positions.shape == (2, 2)
    for pts in (a.ap_positions, a.ms_positions):
        assert np.all(pts >= 0.0) and np.all(pts <= 400.0)
    assert np.array_equal(a.ap_positions, b.ap_positions)
    assert np.array_equal(a.ms_positions, b.ms_positions)


def test_path_loss_reference_distances():
    # intercept at 1 m, then 38 dB per decade
    assert path_loss_db(1.0) == pytest.approx(-30.5)
    assert path_loss_db(10.0) == pytest.approx(-68.5)
    # sub-meter distances clamp to the 1 m value
    assert path_loss_db(0.05) == pytest.approx(-30.5)


def test_large_scale_structure():
    cfg = small_system(num_aps=5, num_ms=4)
    layout = generate_layout(cfg, np.random.default_rng(0))
    fading = large_scale(layout, np.random.default_rng(1))
    assert fading.beta_ap_ms.shape == (5, 4)
    assert np.all(fading.beta_ap_ms > 0.0)
    assert np.all(fading.beta_ap_ms <= 1.0)
    for m in (fading.beta_ap_ap, fading.beta_ms_ms):
        assert np.array_equal(m, m.T)
        assert np.all(np.diag(m) == 0.0)
        off = m[~np.eye(m.shape[0], dtype=bool)]
        assert np.all(off > 0.0) and np.all(off <= 1.0)


def test_large_scale_shadowing_spread():
    # identical distances, spread across draws should be ~4 dB
    layout = generate_layout(small_system(num_aps=200, num_ms=1, cell_length=1e-6),
                             np.random.default_rng(3))
    fading = large_scale(layout, np.random.default_rng(4))
    db = 10 * np.log10(fading.beta_ap_ms[:, 0])
    assert np.std(db) == pytest.approx(4.0, rel=0.25)


def constant_fading(L, D, N, beta=1e-6):
    ap_ap = np.full((L, L), beta)
    np.fill_diagonal(ap_ap, 0.0)
    ms_ms = np.full((D, D), beta)
    np.fill_diagonal(ms_ms, 0.0)
    from mddcf.channel import LargeScaleFading
    return LargeScaleFading(beta_ap_ms=np.full((L, D), beta),
                            beta_ap_ap=ap_ap, beta_ms_ms=ms_ms)


def test_tap_variance_matches_model():
    # 40*25*25*4 = 250k tap samples at one shared beta
    cfg = small_system(num_aps=40, num_ms=25, antennas_per_ap=25)
    beta = 1e-6
    fading = constant_fading(40, 25, 25, beta)
    ch = generate_channels(fading, cfg, PROFILE, np.random.default_rng(11))
    samples = ch.cir_ap_ms
    var = np.mean(np.abs(samples) ** 2)
    n = samples.size
    sigma_est = np.sqrt(2.0 / n)  # relative std of the variance estimator
    assert abs(var - beta / 4) / (beta / 4) < 3 * sigma_est


def test_tap_independence():
    cfg = small_system(num_aps=40, num_ms=25, antennas_per_ap=25)
    fading = constant_fading(40, 25, 25)
    ch = generate_channels(fading, cfg, PROFILE, np.random.default_rng(12))
    flat = ch.cir_ap_ms.reshape(-1, 4)
    for u in range(1, 4):
        corr = np.mean(flat[:, 0] * np.conj(flat[:, u]))
        corr /= np.mean(np.abs(flat[:, 0]) ** 2)
        assert abs(corr) < 0.02


def test_si_draws_scaled_and_zero_limit():
    cfg = small_system()
    fading = constant_fading(3, 2, 4)
    ch = generate_channels(fading, cfg, PROFILE, np.random.default_rng(5))
    assert ch.si_ap.shape == (3, 4, 4)
    assert ch.si_ms.shape == (2,)
    silent = InterferenceProfile(si_ap=0.0, si_ms=0.0, iai=0.0, imi=0.0)
    ch0 = generate_channels(fading, cfg, silent, np.random.default_rng(5))
    assert np.all(ch0.si_ap == 0.0)
    assert np.all(ch0.si_ms == 0.0)


def test_si_variance():
    cfg = small_system(num_aps=60, antennas_per_ap=20)
    fading = constant_fading(60, 2, 20)
    ch = generate_channels(fading, cfg, PROFILE, np.random.default_rng(6))
    var = np.mean(np.abs(ch.si_ap) ** 2)  # 24k samples
    assert var == pytest.approx(PROFILE.si_ap, rel=0.05)


def test_generation_deterministic():
    cfg = small_system()
    layout = generate_layout(cfg, np.random.default_rng(1))
    fading = large_scale(layout, np.random.default_rng(2))
    a = generate_channels(fading, cfg, PROFILE, np.random.default_rng(3))
    b = generate_channels(fading, cfg, PROFILE, np.random.default_rng(3))
    for name in ("cir_ap_ms", "cir_ap_ap", "cir_ms_ms", "si_ap", "si_ms"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


# --------------------------------------------------------------------------
# subcarrier partition
# --------------------------------------------------------------------------

def test_partition_reference_grid():
    cfg = SystemConfig()  # 48 total, 16 UL
    smap = partition_subcarriers(cfg)
    assert np.array_equal(smap.ul_indices, np.arange(0, 48, 3))
    assert len(smap.dl_indices) == 32
    union = np.union1d(smap.dl_indices, smap.ul_indices)
    assert np.array_equal(union, np.arange(48))
    assert len(np.intersect1d(smap.dl_indices, smap.ul_indices)) == 0


def test_partition_degenerate_all_ul():
    cfg = small_system(dl_subcarriers=0, ul_subcarriers=12, total_subcarriers=12)
    smap = partition_subcarriers(cfg)
    assert np.array_equal(smap.ul_indices, np.arange(12))
    assert len(smap.dl_indices) == 0


def test_partition_uneven_grid_rejected():
    cfg = small_system(dl_subcarriers=43, ul_subcarriers=5,
                       total_subcarriers=48)
    with pytest.raises(ValueError, match="uneven UL grid"):
        partition_subcarriers(cfg)


def test_partition_full_pool_modes():
    for mode in ("tdd", "ibfd"):
        cfg = small_system(dl_subcarriers=12, ul_subcarriers=12,
                           total_subcarriers=12, duplex_mode=mode)
        smap = partition_subcarriers(cfg)
        assert np.array_equal(smap.dl_indices, np.arange(12))
        assert np.array_equal(smap.ul_indices, np.arange(12))


def test_dft_unitary():
    smap = partition_subcarriers(small_system())
    f = smap.dft
    assert np.allclose(f @ f.conj().T, np.eye(12), atol=1e-12)
    assert smap.tap_selector.shape == (12, 4)
    assert np.array_equal(smap.tap_selector, np.eye(12, 4))


# --------------------------------------------------------------------------
# frequency mapping
# --------------------------------------------------------------------------

def test_delta_tap_flat_frequency():
    cfg = small_system(num_aps=1, num_ms=1, antennas_per_ap=1,
                       dl_subcarriers=3, ul_subcarriers=1,
                       total_subcarriers=4, delay_taps=1)
    smap = partition_subcarriers(cfg)
    from mddcf.channel import ChannelSet
    ch = ChannelSet(
        cir_ap_ms=np.ones((1, 1, 1, 1), dtype=complex),
        cir_ap_ap=np.zeros((1, 1, 1, 1, 1), dtype=complex),
        cir_ms_ms=np.zeros((1, 1, 1), dtype=complex),
        si_ap=np.zeros((1, 1, 1), dtype=complex),
        si_ms=np.zeros((1,), dtype=complex),
    )
    freq = to_frequency(ch, smap)
    # unitary DFT of a unit delta over 4 subcarriers: 1/2 everywhere
    assert np.allclose(freq.h_ap_ms_dl, 0.5)
    assert np.allclose(freq.h_ap_ms_ul, 0.5)


def test_parseval():
    cfg = small_system(dl_subcarriers=12, ul_subcarriers=12,
                       total_subcarriers=12, duplex_mode="ibfd")
    fading = constant_fading(3, 2, 4)
    ch = generate_channels(fading, cfg, PROFILE, np.random.default_rng(8))
    freq = to_frequency(ch, partition_subcarriers(cfg))
    lhs = np.sum(np.abs(freq.h_ap_ms_dl) ** 2, axis=-1)
    rhs = np.sum(np.abs(ch.cir_ap_ms) ** 2, axis=-1)
    assert np.allclose(lhs, rhs)


def test_against_naive_dft_sum():
    cfg = small_system()
    fading = constant_fading(3, 2, 4)
    ch = generate_channels(fading, cfg, PROFILE, np.random.default_rng(9))
    smap = partition_subcarriers(cfg)
    freq = to_frequency(ch, smap)
    m_sum, u_taps = 12, 4
    for l, d, n in [(0, 0, 0), (2, 1, 3), (1, 1, 2)]:
        g = ch.cir_ap_ms[l, d, n]
        direct = np.array([
            sum(g[u] * np.exp(-2j * np.pi * m * u / m_sum)
                for u in range(u_taps)) / np.sqrt(m_sum)
            for m in range(m_sum)])
        assert np.allclose(freq.h_ap_ms_dl[l, d, n], direct[smap.dl_indices])
        assert np.allclose(freq.h_ap_ms_ul[l, d, n], direct[smap.ul_indices])


def test_frequency_ensemble_power():
    # >= 1e5 realizations per subcarrier at a shared beta
    cfg = small_system(num_aps=40, num_ms=25, antennas_per_ap=10)
    beta = 1e-6
    fading = constant_fading(40, 25, 10, beta)
    ch = generate_channels(fading, cfg, PROFILE, np.random.default_rng(10))
    freq = to_frequency(ch, partition_subcarriers(cfg))
    power = np.mean(np.abs(freq.h_ap_ms_dl) ** 2)
    assert abs(power - beta / 12) / (beta / 12) < 0.02


def test_to_frequency_dimension_mismatch():
    cfg = small_system()
    fading = constant_fading(3, 2, 4)
    ch = generate_channels(fading, cfg, PROFILE, np.random.default_rng(9))
    bad = partition_subcarriers(small_system(delay_taps=6))
    with pytest.raises(ValueError, match="taps"):
        to_frequency(dataclasses.replace(ch), bad)


# --------------------------------------------------------------------------
# prediction surrogate
# --------------------------------------------------------------------------

def test_predict_eps_zero_identity():
    cfg = small_system()
    fading = constant_fading(3, 2, 4)
    ch = generate_channels(fading, cfg, PROFILE, np.random.default_rng(20))
    pred = predict_channels(ch, fading, cfg, PROFILE, 0.0,
                            np.random.default_rng(21))
    assert pred is ch


def test_predict_preserves_power_and_decorrelates():
    cfg = small_system(num_aps=40, num_ms=25, antennas_per_ap=10)
    beta = 1e-6
    fading = constant_fading(40, 25, 10, beta)
    ch = generate_channels(fading, cfg, PROFILE, np.random.default_rng(22))
    for eps, rho in [(0.3, np.sqrt(1 - 0.3 ** 2)), (1.0, 0.0)]:
        pred = predict_channels(ch, fading, cfg, PROFILE, eps,
                                np.random.default_rng(23))
        var = np.mean(np.abs(pred.cir_ap_ms) ** 2)
        assert var == pytest.approx(beta / 4, rel=0.02)
        corr = np.mean(pred.cir_ap_ms * np.conj(ch.cir_ap_ms)) / (beta / 4)
        assert corr.real == pytest.approx(rho, abs=0.02)
        assert np.array_equal(pred.si_ap, ch.si_ap)


def test_predict_rejects_bad_eps():
    cfg = small_system()
    fading = constant_fading(3, 2, 4)
    ch = generate_channels(fading, cfg, PROFILE, np.random.default_rng(24))
    with pytest.raises(ValueError):
        predict_channels(ch, fading, cfg, PROFILE, 1.5,
                         np.random.default_rng(25))


# --------------------------------------------------------------------------
# dump / replay
# --------------------------------------------------------------------------

def test_save_load_bit_exact(tmp_path):
    cfg = small_system()
    layout = generate_layout(cfg, np.random.default_rng(30))
    fading = large_scale(layout, np.random.default_rng(31))
    ch = generate_channels(fading, cfg, PROFILE, np.random.default_rng(32))
    path = tmp_path / "channels.npz"
    save_channels(ch, path)
    back = load_channels(path)
    for name in ("cir_ap_ms", "cir_ap_ap", "cir_ms_ms", "si_ap", "si_ms"):
        assert np.array_equal(getattr(ch, name), getattr(back, name))
