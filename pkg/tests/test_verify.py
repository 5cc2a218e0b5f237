import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import TWO_PI, cos_field, trig_field
from pshenv import (
    GridField,
    build_geometry,
    continuation_sweep,
    envelope_beta_limit,
    envelope_psor,
)
from pshenv.verify import (
    CheckRecord,
    ContactError,
    contact_hessian_check,
    contact_hessian_tolerance,
    free_boundary_collar,
    h_lambda,
    hessian_uniformity,
    inputs_digest,
    ma_concentration_check,
    ma_mass_check,
    q_diagnostic,
    rate_fit,
)

SCHED = [2.0**k for k in range(4, 11)]


@pytest.fixture(scope="module")
def cos128():
    v = cos_field(build_geometry(1), 128, 0.3)
    return v, envelope_psor(v), continuation_sweep(v, SCHED)


@pytest.fixture(scope="module")
def const_sweep():
    v = GridField.constant(build_geometry(1), 16, 0.2)
    return continuation_sweep(v, [2.0, 4.0, 8.0, 16.0])


class TestRateFit:
    def test_constant(self, const_sweep):
        rf = rate_fit(const_sweep)
        assert rf.errors == (0.0, 0.0, 0.0)
        assert rf.kappa == 0.0 and rf.passed
        assert rf.reference.startswith("self")

    def test_self_reference_excludes_last(self, cos128):
        _, _, sw = cos128
        rf = rate_fit(sw)
        assert rf.betas == tuple(sw.betas[:-1])

    def test_against_oracle(self, cos128):
        _, psor, sw = cos128
        rf = rate_fit(sw, psor)
        assert rf.reference == "psor-oracle"
        assert rf.errors_decreasing and rf.passed
        for b, e, c in zip(rf.betas, rf.errors, rf.constants):
            assert c == pytest.approx(b * e / math.log(b))

    def test_oracle_itself_has_zero_error(self, cos128):
        v, psor, sw = cos128
        # feeding the reference solution back gives exactly zero errors
        fake = dataclasses.replace(psor, envelope=sw[0].phi)
        assert rate_fit(sw, fake).errors[0] == 0.0

    def test_rejections(self, const_sweep):
        with pytest.raises(ValueError, match="three"):
            rate_fit(continuation_sweep(const_sweep.obstacle, [2.0, 4.0, 8.0]))
        with pytest.raises(ValueError, match="beta > 1"):
            rate_fit(continuation_sweep(const_sweep.obstacle, [1.0, 2.0, 4.0, 8.0]))


class TestHessianUniformity:
    def test_constant(self, const_sweep):
        hu = hessian_uniformity(const_sweep)
        assert hu.sup_lambda1 == (0.0,) * 4
        assert hu.plateau_ratio == 1.0 and hu.passed

    def test_too_short(self, const_sweep):
        with pytest.raises(ValueError, match="four"):
            hessian_uniformity(continuation_sweep(const_sweep.obstacle, [2.0, 4.0, 8.0]))

    def test_plateau(self, cos128):
        _, _, sw = cos128
        hu = hessian_uniformity(sw, 256.0)
        assert hu.reference == "beta=256"
        assert hu.passed
        # third derivatives keep growing across the free boundary
        assert hu.sup_third[-1] > 2 * hu.sup_third[sw.betas.index(256.0)]


class TestMass:
    def test_constant(self, geom1):
        env = envelope_psor(GridField.constant(geom1, 32, 0.4))
        assert ma_mass_check(env) <= 1e-12

    def test_subcritical(self, geom1):
        env = envelope_psor(cos_field(geom1, 64, 0.05))
        assert ma_mass_check(env) <= 1e-10

    def test_constant_n2(self, geom2):
        sw = continuation_sweep(GridField.constant(geom2, 4, 0.1), [2.0, 4.0, 8.0])
        assert ma_mass_check(envelope_beta_limit(sw)) <= 1e-12

    def test_empty_contact(self, geom1):
        env = envelope_psor(cos_field(geom1, 32, 0.3))
        empty = dataclasses.replace(env, contact_mask=np.zeros_like(env.contact_mask))
        with pytest.raises(ContactError):
            ma_mass_check(empty)

    def test_refinement(self, geom1):
        errs = [ma_mass_check(envelope_psor(cos_field(geom1, N, 0.3))) for N in (64, 128, 256)]
        assert errs[0] > errs[1] > errs[2]


class TestContactSet:
    def test_collar(self):
        mask = np.zeros((16, 4), bool)
        mask[6:10] = True
        c = free_boundary_collar(mask, 1)
        assert c[4:12].all() and not c[:4].any() and not c[12:].any()
        assert not free_boundary_collar(np.ones((8, 8), bool), 3).any()

    def test_concentration(self, cos128):
        _, psor, _ = cos128
        assert ma_concentration_check(psor, 2) <= 0.01

    def test_contact_hessian(self, cos128):
        v, psor, _ = cos128
        assert contact_hessian_check(psor) <= contact_hessian_tolerance(v)

    def test_contact_hessian_beta_limit(self, geom1):
        v = cos_field(geom1, 64, 0.05)
        env = envelope_beta_limit(continuation_sweep(v, SCHED), rate_kappa=0.5)
        assert contact_hessian_check(env) <= contact_hessian_tolerance(v)

    def test_tolerance_scaling(self, geom1):
        a = contact_hessian_tolerance(cos_field(geom1, 64, 0.3))
        b = contact_hessian_tolerance(cos_field(geom1, 128, 0.3))
        assert a / b == pytest.approx(4.0)
        assert a == pytest.approx(10 * TWO_PI**4 * 0.3 / 64**2)


class TestQ:
    def test_constant_empty_domain(self, const_sweep):
        q = q_diagnostic(const_sweep[-1])
        assert q.sup_q is None and q.argmax_q is None
        assert not q.q_domain.any()
        assert np.isnan(q.q_values).all()
        assert "empty" in q.note
        assert q.lam == 1.0

    def test_lambda(self, geom1):
        v = cos_field(geom1, 64, 0.3)
        # sup |dv|^2 = (0.3 * 2 pi)^2 / 4 in the torus normalization
        s = np.max(np.abs(0.3 * TWO_PI * np.sin(TWO_PI * np.arange(64) / 64))) ** 2 / 4
        assert h_lambda(v) == pytest.approx(1 / (1 + 2 * s), rel=1e-12)

    def test_reference(self, cos128):
        _, _, sw = cos128
        q = q_diagnostic(sw[-1], A=10.0)
        assert q.h_identity_defect <= 1e-12 and q.h_bounds_ok
        assert q.q_domain.any()
        assert np.isfinite(q.q_values[q.q_domain]).all()
        assert np.isnan(q.q_values[~q.q_domain]).all()
        assert q.sup_q == pytest.approx(np.nanmax(q.q_values))
        assert len(q.argmax_q) == 2

    @given(st.lists(st.floats(-0.05, 0.05), min_size=1, max_size=3))
    def test_h_identity_property(self, c):
        v = trig_field(build_geometry(1), 16, c)
        sw = continuation_sweep(v, [4.0])
        q = q_diagnostic(sw[-1])
        assert q.h_identity_defect <= 1e-12
        assert q.h_bounds_ok
        assert 0 < q.lam <= 1


class TestRecords:
    def test_digest(self, geom1):
        a = GridField.constant(geom1, 8, 0.0)
        b = GridField.constant(geom1, 8, 1e-300)
        assert inputs_digest(a) == inputs_digest(a.values)
        assert inputs_digest(a) != inputs_digest(b)
        assert inputs_digest(a, a) != inputs_digest(a)
        assert len(inputs_digest(a)) == 64

    def test_record_dict(self):
        r = CheckRecord("x", "d", 1.0, 2.0, "passed")
        assert r.as_dict() == dict(name="x", inputs_digest="d", measured=1.0,
                                   threshold=2.0, status="passed", detail="")
