"""Plurisubharmonic envelopes P(v) = sup{u omega-psh : u <= v}.

Three routes:

* ``envelope_beta_limit`` -- the last member of a beta continuation sweep;
* ``envelope_psor`` -- in complex dimension one the psh cone is linear and
  P(v) solves the complementarity problem

      u <= v,   g + (1/4) Lap u >= 0,   (v - u) (g + (1/4) Lap u) = 0,

  which is solved by projected SOR on the 5-point Laplacian;
* ``rooftop`` -- P(min_j v_j), through either of the above.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .newton import SweepResult, continuation_sweep, DEFAULT_SCHEDULE
from .torus import GridField, HermitianField, complex_hessian, mollify

__all__ = [
    "EnvelopeResult",
    "OracleError",
    "envelope_beta_limit",
    "envelope_psor",
    "rooftop",
    "contact_mask_from_beta",
    "ma_density",
    "theta_density",
    "DEFAULT_CONTACT_KAPPA",
]

# contact threshold used before any rate constant has been measured
DEFAULT_CONTACT_KAPPA = 5.0


class OracleError(RuntimeError):
    def __init__(self, msg, residual=None, iterations=None):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class EnvelopeResult:
    obstacle: GridField
    envelope: GridField
    method: str
    contact_mask: np.ndarray
    contact_policy: str
    ma_density: GridField
    beta_used: float | None = None
    psor_iterations: int | None = None
    error_estimate: float | None = None
    params: dict = field(default_factory=dict)

    @property
    def u_theta(self) -> GridField:
        return self.envelope - self.obstacle

    @property
    def geometry(self):
        return self.obstacle.geometry


def theta_density(v: GridField) -> GridField:
    """``theta^n / omega^n`` with ``theta = omega + i ddbar v`` (spectral)."""
    geom = v.geometry
    m = HermitianField(geom, geom.metric + complex_hessian(v).values)
    return v.like(m.det() / geom.volume)


def ma_density(v: GridField, u_theta: GridField) -> GridField:
    """``(theta + i ddbar u_theta)^n / omega^n``.

    ``theta`` is differentiated spectrally (``v`` is smooth); ``u_theta`` only
    has bounded second derivatives and is differentiated by central differences.
    """
    geom = v.geometry
    m = geom.metric + complex_hessian(v).values + complex_hessian(u_theta, method="fd").values
    return v.like(HermitianField(geom, m).det() / geom.volume)


def contact_mask_from_beta(sol, kappa: float) -> np.ndarray:
    """Nodes with ``v - phi <= kappa log(beta) / beta``."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if sol.beta <= 1:
        raise ValueError("contact threshold kappa*log(beta)/beta needs beta > 1")
    thresh = kappa * math.log(sol.beta) / sol.beta
    return (sol.obstacle.values - sol.phi.values) <= thresh


def envelope_beta_limit(
    sweep: SweepResult,
    rate_kappa: float | None = None,
    contact_kappa: float | None = None,
) -> EnvelopeResult:
    """Envelope from the largest beta of a sweep, clipped so that ``u_theta <= 0``.

    ``rate_kappa`` is the measured constant in ``|u_beta - u_theta| <= kappa log(beta)/beta``;
    the contact threshold defaults to twice it, or to DEFAULT_CONTACT_KAPPA
    when no rate has been measured.
    """
    if len(sweep) == 0:
        raise ValueError("empty sweep")
    last = sweep[-1]
    v = last.obstacle
    u = last.u_beta.values
    u_theta = v.like(np.minimum(u, 0.0))
    if contact_kappa is None:
        contact_kappa = 2.0 * rate_kappa if rate_kappa else DEFAULT_CONTACT_KAPPA
    mask = contact_mask_from_beta(last, contact_kappa)
    scale = math.log(last.beta) / last.beta
    return EnvelopeResult(
        obstacle=v,
        envelope=v + u_theta,
        method="beta-limit",
        contact_mask=mask,
        contact_policy=f"v - phi <= {contact_kappa:.6g} * log(beta)/beta at beta={last.beta:g}",
        ma_density=ma_density(v, u_theta),
        beta_used=last.beta,
        error_estimate=rate_kappa * scale if rate_kappa else None,
        params=dict(rate_kappa=rate_kappa, contact_kappa=contact_kappa,
                    schedule=list(sweep.betas)),
    )


@numba.njit(cache=True)
def _psor_sweep(u, v, c, omega):
    # red-black ordering; the checkerboard is consistent because N is even
    N = u.shape[0]
    for color in range(2):
        for i in range(N):
            ip = i + 1 if i + 1 < N else 0
            im = i - 1 if i > 0 else N - 1
            for j in range((i + color) % 2, N, 2):
                jp = j + 1 if j + 1 < N else 0
                jm = j - 1 if j > 0 else N - 1
                gs = 0.25 * (u[ip, j] + u[im, j] + u[i, jp] + u[i, jm]) + c
                un = u[i, j] + omega * (gs - u[i, j])
                u[i, j] = un if un < v[i, j] else v[i, j]


@numba.njit(cache=True)
def _psor_residual(u, v, g, h):
    """Largest of obstacle violation, |min(v-u, Lu)| and |(v-u) Lu|."""
    N = u.shape[0]
    r = 0.0
    for i in range(N):
        ip = i + 1 if i + 1 < N else 0
        im = i - 1 if i > 0 else N - 1
        for j in range(N):
            jp = j + 1 if j + 1 < N else 0
            jm = j - 1 if j > 0 else N - 1
            L = g + (u[ip, j] + u[im, j] + u[i, jp] + u[i, jm] - 4.0 * u[i, j]) / (4.0 * h * h)
            d = v[i, j] - u[i, j]
            r = max(r, abs(min(d, L)), abs(d * L), -d)
    return r


def _prolong(uc: np.ndarray) -> np.ndarray:
    """Periodic bilinear interpolation to the doubled grid."""
    N = 2 * uc.shape[0]
    uf = np.empty((N, N))
    uf[0::2, 0::2] = uc
    uf[1::2, 0::2] = 0.5 * (uc + np.roll(uc, -1, 0))
    uf[:, 1::2] = 0.5 * (uf[:, 0::2] + np.roll(uf[:, 0::2], -1, 1))
    return uf


def _psor_solve(v: np.ndarray, g: float, tol: float, omega: float, max_sweeps: int,
                nested_min: int | None, check_every: int = 10):
    N = v.shape[0]
    h = 1.0 / N
    sweeps_coarse = 0
    if nested_min is not None and N >= 2 * nested_min:
        uc, _, sweeps_coarse, _ = _psor_solve(v[::2, ::2], g, tol, omega, max_sweeps,
                                              nested_min, check_every)
        u = np.minimum(_prolong(uc), v)
    else:
        u = v.copy()
    c = h * h * g
    res = _psor_residual(u, v, g, h)
    sweeps = 0
    while res > tol:
        if sweeps >= max_sweeps:
            raise OracleError(
                f"projected SOR did not converge in {max_sweeps} sweeps (residual {res:.3e})",
                residual=res, iterations=sweeps,
            )
        for _ in range(check_every):
            _psor_sweep(u, v, c, omega)
        sweeps += check_every
        res = _psor_residual(u, v, g, h)
    return u, res, sweeps, sweeps_coarse


def envelope_psor(
    v: GridField,
    tol: float = 1e-9,
    omega: float = 1.8,
    max_sweeps: int = 500_000,
    nested: bool = True,
) -> EnvelopeResult:
    """Complementarity oracle for P(v), complex dimension one only.

    Projected SOR, red-black ordering, on the 5-point Laplacian.  Stops when
    the obstacle violation, ``|min(v - u, Lu)|`` and the complementarity
    product are all below ``tol`` at every node.  With ``nested`` the
    iteration starts from the (bilinearly interpolated) solution on the grid
    coarsened by two, recursively down to 32 nodes per axis; the fixed point
    does not depend on the start.
    """
    geom = v.geometry
    if geom.complex_dim != 1:
        raise ValueError("the complementarity oracle needs complex dimension 1: "
                         "for n = 2 the psh constraint is not linear")
    if not 0 < omega < 2:
        raise ValueError("over-relaxation parameter must lie in (0, 2)")
    g = float(geom.metric[0, 0].real)
    vals = np.ascontiguousarray(v.values, dtype=float)
    u, res, sweeps, coarse = _psor_solve(vals, g, tol, omega, max_sweeps,
                                         32 if nested else None)
    env = v.like(u)
    u_theta = env - v
    return EnvelopeResult(
        obstacle=v,
        envelope=env,
        method="psor-oracle",
        contact_mask=(u == vals),
        contact_policy="active set of the complementarity solve (u == v)",
        ma_density=ma_density(v, u_theta),
        psor_iterations=sweeps,
        params=dict(tol=tol, omega=omega, residual=res, coarse_sweeps=coarse,
                    nested=nested),
    )


def rooftop(
    v_list,
    method: str = "psor",
    eps: float | None = None,
    schedule=DEFAULT_SCHEDULE,
    tol: float | None = None,
    **kw,
) -> EnvelopeResult:
    """Rooftop envelope ``P(min_j v_j)``.

    The psor path uses the raw pointwise minimum.  The beta-limit path needs
    a smooth obstacle and solves against ``mollify(min_j v_j, eps)``,
    ``eps`` defaulting to two grid cells.
    """
    v_list = list(v_list)
    if not v_list:
        raise ValueError("rooftop needs at least one obstacle")
    first = v_list[0]
    for w in v_list[1:]:
        first.check_same_grid(w)
    vmin = first.like(np.minimum.reduce([w.values for w in v_list]))
    if method in ("psor", "psor-oracle"):
        res = envelope_psor(vmin, tol=tol if tol is not None else 1e-9, **kw)
        extra = dict(components=len(v_list))
    elif method == "beta-limit":
        if eps is None:
            eps = 2.0 / first.N
        smooth = mollify(vmin, eps)
        rate_kappa = kw.pop("rate_kappa", None)
        contact_kappa = kw.pop("contact_kappa", None)
        sweep = continuation_sweep(smooth, schedule, tol=tol if tol is not None else 1e-10, **kw)
        res = envelope_beta_limit(sweep, rate_kappa=rate_kappa, contact_kappa=contact_kappa)
        extra = dict(components=len(v_list), eps=eps)
    else:
        raise ValueError(f"unknown rooftop method {method!r}")
    params = dict(res.params)
    params.update(extra, inner_method=res.method)
    return EnvelopeResult(
        obstacle=res.obstacle,
        envelope=res.envelope,
        method="rooftop",
        contact_mask=res.contact_mask,
        contact_policy=res.contact_policy,
        ma_density=res.ma_density,
        beta_used=res.beta_used,
        psor_iterations=res.psor_iterations,
        error_estimate=res.error_estimate,
        params=params,
    )
