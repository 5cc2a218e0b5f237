import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from conftest import TWO_PI, cos_field, trig_field
from pshenv import (
    GridField,
    PositivityError,
    SolverError,
    StagnationError,
    build_geometry,
    continuation_sweep,
    density_residual,
    grid_coords,
    ma_residual,
    max_principle_box,
    positivity_margin,
    quadratic_tail,
    solve_beta,
)
from pshenv.newton import invariant_axes


def spectral_d2_matrix(N):
    """Second-derivative collocation matrix on the unit period (closed form)."""
    h = TWO_PI / N
    j = np.arange(N)
    diff = j[:, None] - j[None, :]
    with np.errstate(divide="ignore"):
        D = -((-1.0) ** diff) / (2 * np.sin(diff * h / 2) ** 2)
    D[j, j] = -np.pi**2 / (3 * h * h) - 1.0 / 6
    return D * TWO_PI**2


def dense_oracle_1d(vx, beta_target, tol=1e-12):
    """Newton with continuation on 1 + phi''/4 = exp(beta (phi - v)) in one real variable."""
    N = vx.size
    D = spectral_d2_matrix(N)
    phi = np.full(N, vx.min())
    beta = 1.0
    while True:
        for _ in range(100):
            e = np.exp(beta * (phi - vx))
            F = 1 + D @ phi / 4 - e
            if np.abs(F).max() < tol:
                break
            J = D / 4 - np.diag(beta * e)
            step = np.linalg.solve(J, -F)
            t = 1.0
            while np.abs(1 + D @ (phi + t * step) / 4 - np.exp(beta * (phi + t * step - vx))).max() \
                    > (1 - 1e-4 * t) * np.abs(F).max():
                t /= 2
            phi = phi + t * step
        if beta >= beta_target:
            return phi
        beta = min(2 * beta, beta_target)


def analytic_envelope_cos(a, x):
    """P(a cos 2 pi x) for a > 1/pi^2: quadratic cap -2 x^2 + c on |x| < s, v elsewhere."""
    s = brentq(lambda s: 4 * s - a * TWO_PI * math.sin(TWO_PI * s), 1e-6, 0.5)
    c = a * math.cos(TWO_PI * s) + 2 * s * s
    xd = (x + 0.5) % 1.0 - 0.5
    return np.where(np.abs(xd) < s, -2 * xd**2 + c, a * np.cos(TWO_PI * x)), s


class TestResidual:
    def test_constant_zero(self, geom1):
        v = GridField.constant(geom1, 8, 0.7)
        assert ma_residual(v, v, 3.0).sup_norm() == 0

    def test_constant_shift(self, geom1):
        phi = GridField.constant(geom1, 8, 0.25)
        v = GridField.constant(geom1, 8, 0.0)
        np.testing.assert_allclose(ma_residual(phi, v, 1.0).values, -0.25)

    def test_substitution(self, geom1):
        v = cos_field(geom1, 16, 0.2)
        phi = GridField.constant(geom1, 16, 0.0)
        np.testing.assert_allclose(ma_residual(phi, v, 1.0).values, v.values, atol=1e-15)

    def test_non_positive_rejected(self, geom1):
        phi = cos_field(geom1, 16, 1.0)  # 1 - pi^2 cos < 0 somewhere
        v = GridField.constant(geom1, 16, 0.0)
        with pytest.raises(PositivityError) as exc:
            ma_residual(phi, v, 1.0)
        assert exc.value.eigenvalue < 0 and exc.value.node is not None

    def test_density_form_agrees_near_solution(self, geom1):
        v = cos_field(geom1, 32, 0.05)
        sol = solve_beta(v, 8.0)
        assert ma_residual(sol.phi, v, 8.0).sup_norm() < 1e-9
        assert density_residual(sol.phi, v, 8.0).sup_norm() <= 1e-10


class TestSolveBeta:
    @pytest.mark.parametrize("beta", [1.0, 64.0, 4096.0])
    def test_constant_obstacle(self, geom1, beta):
        v = GridField.constant(geom1, 16, -0.4)
        sol = solve_beta(v, beta)
        assert sol.newton_iters <= 2
        assert (sol.phi - v).sup_norm() <= 1e-10
        assert sol.u_beta.sup_norm() <= 1e-10

    def test_rejects_bad_arguments(self, geom1):
        v = GridField.constant(geom1, 8, 0.0)
        with pytest.raises(ValueError):
            solve_beta(v, 0.0)
        with pytest.raises(ValueError):
            solve_beta(v, 1.0, tol=0.0)

    def test_rejects_inadmissible_init(self, geom2):
        v = GridField.constant(geom2, 4, 0.0)
        bad = GridField.from_function(geom2, 4, lambda x1, y1, x2, y2: np.cos(TWO_PI * x1))
        with pytest.raises(PositivityError):
            solve_beta(v, 4.0, init=bad)

    def test_subcritical_against_dense_oracle(self, geom1):
        a, beta, N = 0.05, 1024.0, 64
        v = cos_field(geom1, N, a)
        sweep = continuation_sweep(v, [2.0**k for k in range(11)])
        sol = sweep[-1]
        x = np.arange(N) / N
        ref = dense_oracle_1d(a * np.cos(TWO_PI * x), beta)
        assert np.abs(sol.phi.values[:, 0] - ref).max() < 1e-9
        assert np.ptp(sol.phi.values, axis=1).max() == 0.0  # y-invariance kept exactly
        # two-sided maximum-principle box: log(min theta)/beta <= u <= log(max theta)/beta
        theta = 1 - a * np.pi**2 * np.cos(TWO_PI * x)
        assert sol.u_beta.max() <= math.log(theta.max()) / beta + 1e-9
        assert sol.u_beta.min() >= math.log(theta.min()) / beta - 1e-9
        # the lower side is the binding one: |u_beta| exceeds log(1 + 0.05 pi^2)/beta
        assert sol.u_beta.sup_norm() > math.log(1 + a * np.pi**2) / beta

    def test_krylov_and_dense_paths_agree(self, geom1):
        v = cos_field(geom1, 32, 0.3)
        sw_dense = continuation_sweep(v, [1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
        sw_kry = continuation_sweep(v, [1.0, 2.0, 4.0, 8.0, 16.0, 32.0], dense_limit=0)
        assert (sw_dense[-1].phi - sw_kry[-1].phi).sup_norm() < 1e-9
        assert any(r["krylov_iters"] > 0 for r in sw_kry[-1].records)

    def test_shift_equivariance(self, geom1):
        v = trig_field(geom1, 16, [0.1, -0.05])
        a = solve_beta(v, 16.0)
        b = solve_beta(v + 0.37, 16.0)
        assert ((b.phi - 0.37) - a.phi).sup_norm() <= 1e-10

    def test_translation_equivariance(self, geom1):
        v = trig_field(geom1, 16, [0.1, -0.05, 0.07])
        a = solve_beta(v, 16.0)
        b = solve_beta(v.roll((3, -5)), 16.0)
        assert (b.phi - a.phi.roll((3, -5))).sup_norm() <= 1e-10

    def test_uniqueness(self, geom1):
        v = trig_field(geom1, 16, [0.1, -0.05, 0.07])
        a = solve_beta(v, 16.0)
        b = solve_beta(v, 16.0, init=GridField.constant(geom1, 16, v.max()))
        assert (a.phi - b.phi).sup_norm() <= 10 * 1e-10

    @given(st.lists(st.floats(-0.1, 0.1), min_size=1, max_size=3), st.floats(0.0, 0.2))
    def test_monotonicity(self, coeffs, bump):
        geom = build_geometry(1)
        v1 = trig_field(geom, 16, coeffs)
        w = trig_field(geom, 16, [bump, bump / 2])
        v2 = v1 + (w - w.min())  # v1 <= v2
        p1 = solve_beta(v1, 8.0).phi
        p2 = solve_beta(v2, 8.0).phi
        assert np.all(p1.values <= p2.values + 1e-10)

    @given(st.lists(st.floats(-0.08, 0.08), min_size=1, max_size=3))
    def test_max_principle_box(self, coeffs):
        geom = build_geometry(1)
        v = trig_field(geom, 16, coeffs)
        sol = solve_beta(v, 32.0)
        lo, hi = max_principle_box(v, 32.0)
        assert sol.u_beta.max() <= hi + 1e-9
        assert sol.u_beta.min() >= lo - 1e-9

    def test_scaled_metric_constant(self):
        geom = build_geometry(1, [[2.0]])
        v = GridField.constant(geom, 8, 0.3)
        assert solve_beta(v, 10.0).u_beta.sup_norm() <= 1e-12

    def test_non_identity_metric_residual(self):
        geom = build_geometry(2, np.array([[1.5, 0.2 + 0.1j], [0.2 - 0.1j, 1.0]]))
        v = GridField.from_function(geom, 4, lambda x1, y1, x2, y2: 0.02 * np.cos(TWO_PI * (x1 + y2)))
        sol = solve_beta(v, 4.0)
        assert sol.residual_sup <= 1e-10
        assert sol.positivity_margin > 0

    def test_stagnation_carries_history(self, geom1):
        v = cos_field(geom1, 16, 0.3)
        with pytest.raises(StagnationError) as exc:
            solve_beta(v, 256.0, max_iter=1)
        assert len(exc.value.history) >= 1 and exc.value.beta == 256.0


class TestSweep:
    def test_constant(self, geom1):
        v = GridField.constant(geom1, 8, 1.0)
        sw = continuation_sweep(v, [1.0, 2.0, 4.0])
        assert all(s.u_beta.sup_norm() == 0 for s in sw.solutions)

    def test_schedule_must_increase(self, geom1):
        v = GridField.constant(geom1, 8, 1.0)
        with pytest.raises(ValueError):
            continuation_sweep(v, [4.0, 2.0])

    def test_failure_annotated_with_beta(self, geom1):
        v = cos_field(geom1, 16, 0.3)
        with pytest.raises(SolverError, match="continuation failed at beta=16") as exc:
            continuation_sweep(v, [16.0, 32.0, 64.0], max_iter=3)
        assert exc.value.beta == 16.0

    def test_reference_sweep(self, geom1):
        N = 128
        v = cos_field(geom1, N, 0.3)
        sw = continuation_sweep(v, [2.0**k for k in range(4, 13)])
        gaps = sw.successive_gaps
        assert all(b < a for a, b in zip(gaps, gaps[1:]))
        assert all(s.residual_sup <= 1e-10 for s in sw.solutions)
        assert all(s.positivity_margin >= -1e-9 for s in sw.solutions)
        assert all(quadratic_tail(s.residual_history) for s in sw.solutions)
        # against the closed-form envelope of a cos(2 pi x)
        x = grid_coords(v.geometry, N)[0]
        P, s = analytic_envelope_cos(0.3, x)
        err = (sw[-1].phi.values - P)
        assert np.abs(err).max() <= 0.5 * math.log(4096) / 4096
        # frozen: minimum of u_theta = c - 0.3
        assert sw[-1].u_beta.min() == pytest.approx(-0.2320, abs=2e-4)
        assert s == pytest.approx(0.3611, abs=1e-4)

    def test_n2_small(self, geom2):
        v = GridField.from_function(geom2, 8, lambda x1, y1, x2, y2: 0.3 * (np.cos(TWO_PI * x1) + np.cos(TWO_PI * x2)))
        assert invariant_axes(v) == (1, 3)
        sw = continuation_sweep(v, [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0])
        assert all(s.residual_sup <= 1e-10 for s in sw.solutions)
        assert min(s.positivity_margin for s in sw.solutions) >= -1e-5


class TestQuadraticTail:
    def test_quadratic(self):
        assert quadratic_tail([1.0, 0.5, 0.2, 0.03, 8e-4, 5e-7, 2e-13])

    def test_linear_fails(self):
        assert not quadratic_tail([1.0, 0.5, 0.25, 0.125, 0.0625])

    def test_floor(self):
        assert quadratic_tail([1e-3, 1e-6, 5e-11, 4e-11], floor=1e-10)


def test_positivity_margin_identity(geom2):
    assert positivity_margin(GridField.constant(geom2, 4, 0.0)) == pytest.approx(1.0)
