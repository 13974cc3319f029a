import numpy as np
import pytest

from strictgauge import catalog as cat
from strictgauge.bundle import BundleError, build_bundle, check_involutivity, solve_structure_constants
from strictgauge.calculus import DifferentialForm, VectorField, interior_product
from strictgauge.courant import (GenSection, Lift, check_involutive_image, check_isotropy, check_lift_exactness,
                                 dorfman_bracket, pairing, pointwise_image_rank, right_leibniz_defect)
from strictgauge.calculus import field_residual


@pytest.fixture(scope="module")
def so3():
    ch = cat.space_chart()
    return ch, cat.so3_bundle(ch)


def test_rotation_bundle_is_involutive(so3):
    _, b = so3
    rep = check_involutivity(b)
    assert rep.passed and not rep.jacobi_warnings


def test_wrong_structure_constants_are_caught(so3):
    ch, b = so3
    C = [[[-c for c in row] for row in m] for m in b.structure]
    rep = check_involutivity(build_bundle(ch, b.frame, C, b.kernel))
    assert rep.verdict is False


def test_kernel_must_be_annihilated(so3):
    ch, b = so3
    with pytest.raises(BundleError):
        build_bundle(ch, b.frame, b.structure, [[1, 0, 0]])


def test_structure_constants_recovered_numerically(so3):
    ch, b = so3
    sol = solve_structure_constants(b.frame, ch, np.array([[0.3, -0.7, 1.1], [1.0, 0.2, 0.4]]))
    eps = np.array(b.structure, dtype=float)
    proj = sol.constants[0]
    # dependent frame: only rho(C e) is determined
    frame = np.array([[float(c.subs(dict(zip(ch.symbols, (0.3, -0.7, 1.1))))) for c in v.comps] for v in b.frame])
    assert np.allclose(np.einsum("cab,ci->abi", proj - eps, frame), 0, atol=1e-10)
    assert sol.nullity[0] > 0 and not sol.collapsed


def test_lift_properties_for_good_and_wrong(so3):
    good = cat.make("r3_flux:good").problem
    bad = cat.make("r3_flux:bad").problem
    lg = Lift(good.bundle, good.alphas, good.H)
    lb = Lift(bad.bundle, bad.alphas, bad.H)
    assert check_isotropy(lg).passed and check_involutive_image(lg).passed
    assert check_lift_exactness(lg).passed
    assert check_involutive_image(lb).passed and not check_lift_exactness(lb).passed
    assert pointwise_image_rank(lg, [[0.3, 0.4, 0.5]]) == [2]


def test_pairing_and_right_leibniz(so3):
    ch, _ = so3
    x, y, z = ch.symbols
    s = GenSection(VectorField(ch, [y, 0, x]), DifferentialForm.one_form(ch, [z, 1, 0]))
    t = GenSection(VectorField(ch, [0, z, 1]), DifferentialForm.one_form(ch, [0, x, y]))
    assert pairing(s, t) == pairing(t, s)
    H = DifferentialForm(ch, 3, {(0, 1, 2): x})
    d = right_leibniz_defect(s, t, x * y, H)
    assert all(field_residual(part, ch, mode="canonical")[0] for part in (d.vector, d.form))
    # the symmetric part of the bracket is d of the pairing
    sym = dorfman_bracket(s, t, H) + dorfman_bracket(t, s, H)
    from strictgauge.calculus import exterior_derivative
    diff = sym.form - exterior_derivative(DifferentialForm.scalar(ch, pairing(s, t)))
    assert field_residual(diff, ch, mode="canonical")[0]
    assert interior_product(s.vector, t.form).value == x * y
