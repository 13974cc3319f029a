import numpy as np
import pytest

from strictgauge import catalog as cat
from strictgauge import worldsheet as ws


def test_lattice_validation():
    with pytest.raises(ValueError):
        ws.Lattice(3, 8)
    with pytest.raises(ValueError):
        ws.Lattice(8, 8, signature="minkowski")
    lat = ws.Lattice(8, 4, length_tau=1.0)
    assert lat.h_tau == 0.25 and lat.shape == (8, 4)


def test_config_csv_round_trip():
    p = cat.make("r3_flux:good").problem
    lat = ws.Lattice(5, 4)
    cfg = ws.random_config(p, lat, seed=3)
    text = ws.config_to_csv(cfg, lat, "R3")
    back, lat2, header = ws.config_from_csv(text)
    assert lat2 == lat and header["chart"] == "R3"
    assert np.array_equal(back.X, cfg.X) and np.array_equal(back.A, cfg.A)


def test_step_couplings_are_rejected():
    p = cat.make("su2:almost_strict").problem
    lat = ws.Lattice(4, 4)
    cfg = ws.random_config(p, lat, radius=(0.02, 0.08))
    with pytest.raises(ws.LatticeError):
        ws.discrete_action(p, cfg, lat)


def test_lambda_shift_breaks_non_strict_action():
    entry = cat.make("r3_flux:bad")
    p, B = entry.problem, entry.extras["B_inv"]
    lat = ws.Lattice(4, 4)
    cfg = ws.random_config(p, lat, seed=1)
    # a constant shift only adds a total difference, which sums to zero on the torus
    lam = np.random.default_rng(2).normal(size=(*lat.shape, 1, 2))
    s0 = ws.discrete_action(p, cfg, lat, B=B)
    s1 = ws.discrete_action(p, ws.lambda_shift(p, cfg, lam), lat, B=B)
    assert abs(s1 - s0) > 1e-3


def test_o_operator_invertible_on_group_manifold():
    p = cat.make("su2:gg").problem
    rng = np.random.default_rng(0)
    for x in rng.uniform(-1.0, 1.0, size=(10, 3)):
        for sig in ("lorentzian", "euclidean"):
            _, sv = ws.o_operator(p, x, sig)
            assert min(sv) > 1e-3


def _polar_config(N):
    lat = ws.Lattice(N, N)
    s, t = lat.coordinates()
    r = 1 + 0.2 * np.cos(s + t)
    phi = 0.5 * np.sin(s) + 0.3 * np.cos(t)
    return ws.FieldConfig(np.stack([r, phi], -1), np.zeros((N, N, 1, 2))), lat, s, t


def test_polar_elimination_converges_to_angle_gradient():
    p = cat.make("toy_rotation:polar").problem
    errs = []
    for N in (16, 32):
        cfg, lat, s, t = _polar_config(N)
        A = ws.eliminate_gauge_field(p, cfg, lat).A[..., 0, :]
        errs.append(max(np.abs(A[..., 0] - 0.5 * np.cos(s)).max(), np.abs(A[..., 1] + 0.3 * np.sin(t)).max()))
    assert 1.6 < np.log2(errs[0] / errs[1]) < 2.4


def test_reduced_model_matches_eliminated_action():
    entry = cat.make("toy_rotation:polar")
    p = entry.problem
    red = ws.reduced_couplings(p.metric, [0], [1])
    assert red.leaf_independent and red.g_red[0, 0] == 1
    gaps = []
    for N in (16, 32):
        cfg, lat, _, _ = _polar_config(N)
        cfg = ws.eliminate_gauge_field(p, cfg, lat)
        gaps.append(abs(ws.discrete_action(p, cfg, lat) - ws.reduced_action_value(red, cfg.X[..., :1], lat)))
    assert 1.6 < np.log2(gaps[0] / gaps[1]) < 2.4


def test_winding_zero_sector_is_exactly_harmonic():
    p = cat.make("toy_rotation").problem
    N = 12
    lat = ws.Lattice(N, N)
    s, t = lat.coordinates()
    rng = np.random.default_rng(0)
    R = 1.25 - 0.25 * np.cos(t) + 0.05 * rng.normal(size=s.shape)
    R[:, 0], R[:, N // 2] = 1.0, 1.5
    th = 0.3 + 0.1 * rng.normal(size=s.shape)
    th[:, 0] = th[:, N // 2] = 0.3
    X = np.stack([R * np.cos(th), R * np.sin(th)], -1)
    mask = np.zeros(lat.shape, bool)
    mask[:, 0] = mask[:, N // 2] = True
    res = ws.relax(p, ws.FieldConfig(X, np.zeros((N, N, 1, 2))), lat, tol=1e-10,
                   pins=ws.Pins(hard_mask=mask, hard_values=X[mask]))
    assert res.converged
    assert ws.winding_number(res.config, row=1) == 0
    assert ws.radial_wave_residual(res.config, lat, exclude=mask) < 1e-6


def test_gradient_descent_diverges_loudly():
    p = cat.make("toy_rotation").problem
    lat = ws.Lattice(6, 6)
    cfg = ws.random_config(p, lat, seed=0)
    with pytest.raises(ws.RelaxationDiverged) as err:
        ws.relax(p, cfg, lat, method="gd", step_size=1e6, steps=200, gauge="joint")
    assert len(err.value.history) > 0


def test_reduced_radial_profile_hits_pins():
    lat = ws.Lattice(8, 16)
    prof = ws.reduced_radial_profile(lat, 1.0, 1.5, stiffness=1e6)
    assert abs(prof[0] - 1.0) < 1e-3 and abs(prof[8] - 1.5) < 1e-3
    assert np.allclose(prof[1:8], prof[15:8:-1])
