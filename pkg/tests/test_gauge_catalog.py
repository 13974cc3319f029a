import numpy as np
import pytest

from strictgauge import catalog as cat
from strictgauge.gauge import (LORENTZIAN, check_gauging, check_strictness, frame_independent_forms,
                               gauge_variation_integrand, solve_connection_symbolic)


def test_every_catalog_name_builds():
    for name in cat.NAMES:
        entry = cat.make(name)
        assert entry.problem.rank == len(entry.problem.alphas)


def test_unknown_names_raise():
    with pytest.raises(cat.CatalogError):
        cat.make("r3_flux:ugly")
    with pytest.raises(cat.CatalogError):
        cat.make("nothing")
    with pytest.raises(cat.CatalogError):
        cat.make("su2:almost_strict", eps=2)


def test_strictness_witness_for_bad_lift():
    st = check_strictness(cat.make("r3_flux:bad").problem)
    assert st.verdict == "non-strict"
    assert list(st.freezing_constraints()) == [0]


def test_polar_rotation_is_strict_with_transversal_radius():
    entry = cat.make("toy_rotation:polar")
    rep = check_gauging(entry.problem)
    assert rep.passed and rep.strictness == "strict"


def test_frame_independent_forms_vanish_for_good_lift():
    p = cat.make("r3_flux:good").problem
    assert frame_independent_forms(p).passed
    wrong = cat.make("r3_flux:wrong").problem
    assert frame_independent_forms(wrong).verdict("iotaHlambda") is False


def test_wrong_lift_has_nonvanishing_gauge_variation():
    good = gauge_variation_integrand(cat.make("r3_flux:good").problem)
    wrong = gauge_variation_integrand(cat.make("r3_flux:wrong").problem)
    assert good.epsilon_vanishes() is True
    assert wrong.epsilon_vanishes() is False


def test_symbolic_connection_for_poisson_lorentzian():
    p = cat.make("poisson:3_1").problem.with_(sign=LORENTZIAN)
    conn = solve_connection_symbolic(p)
    assert conn is not None
    assert check_gauging(p.with_(connection=conn)).passed


def test_almost_strict_default_eps_profile():
    entry = cat.make("su2:almost_strict")
    prof = cat.strictness_profile(entry, [0.02, 0.07, 0.2])
    assert prof[0] < 1e-12 and prof[1] > 1e-6 and prof[2] < 1e-12
    assert np.isfinite(prof).all()
