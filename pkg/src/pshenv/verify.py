"""Measured diagnostics for the beta family and the envelope."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .envelope import EnvelopeResult, theta_density
from .newton import BetaSolution, SweepResult
from .torus import (
    GridField,
    gradient_norm_sq,
    grid_coords,
    integrate,
    real_hessian,
    real_hessian_lambda1,
    third_derivative_sup,
)

__all__ = [
    "ContactError",
    "RateFit",
    "DiagnosticsReport",
    "CheckRecord",
    "rate_fit",
    "hessian_uniformity",
    "ma_mass_check",
    "ma_concentration_check",
    "contact_hessian_check",
    "contact_hessian_tolerance",
    "free_boundary_collar",
    "h_lambda",
    "q_diagnostic",
    "inputs_digest",
]


class ContactError(ValueError):
    pass


@dataclass(frozen=True)
class RateFit:
    betas: tuple
    passed: bool
    reference: str
    errors: tuple | None = None
    constants: tuple | None = None
    kappa: float | None = None
    sup_lambda1: tuple | None = None
    plateau_ratio: float | None = None
    sup_third: tuple | None = None

    @property
    def errors_decreasing(self) -> bool:
        e = self.errors or ()
        return all(b < a for a, b in zip(e, e[1:]))


@dataclass(frozen=True, eq=False)
class DiagnosticsReport:
    beta: float
    A: float
    lam: float
    lambda1_field: GridField
    grad_sq_field: GridField
    h: np.ndarray
    h_prime: np.ndarray
    h_second: np.ndarray
    q_values: np.ndarray  # NaN off the domain {lambda1 > 0}
    q_domain: np.ndarray
    sup_lambda1: float
    sup_q: float | None
    argmax_q: tuple | None
    h_identity_defect: float
    h_bounds_ok: bool
    note: str = ""


@dataclass(frozen=True)
class CheckRecord:
    name: str
    inputs_digest: str
    measured: float | None
    threshold: float | None
    status: str  # passed | failed | skipped
    detail: str = ""

    def as_dict(self) -> dict:
        return dict(name=self.name, inputs_digest=self.inputs_digest,
                    measured=self.measured, threshold=self.threshold,
                    status=self.status, detail=self.detail)


def inputs_digest(*fields) -> str:
    """sha256 over the raw bytes of the given fields (arrays or GridFields)."""
    h = hashlib.sha256()
    for f in fields:
        arr = f.values if isinstance(f, GridField) else np.asarray(f)
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def rate_fit(sweep: SweepResult, reference: EnvelopeResult | None = None) -> RateFit:
    """Errors ``e = |u_beta - u_theta|`` and constants ``c = beta e / log beta``.

    Without a reference the last sweep entry serves as one and is left out of
    the fit.  Passes when ``max c <= 2 c`` at the smallest beta.
    """
    sols = list(sweep.solutions)
    if reference is None:
        ref = sols[-1].u_beta
        sols = sols[:-1]
        kind = f"self (beta={sweep[-1].beta:g})"
    else:
        ref = reference.u_theta
        kind = reference.method
    if len(sols) < 3:
        raise ValueError("rate fit needs at least three betas")
    if any(s.beta <= 1 for s in sols):
        raise ValueError("rate constants beta e / log beta need beta > 1")
    errs = tuple((s.u_beta - ref).sup_norm() for s in sols)
    cs = tuple(s.beta * e / math.log(s.beta) for s, e in zip(sols, errs))
    kappa = max(cs)
    return RateFit(
        betas=tuple(s.beta for s in sols),
        errors=errs,
        constants=cs,
        kappa=kappa,
        passed=bool(kappa <= 2.0 * cs[0]),
        reference=kind,
    )


def hessian_uniformity(sweep: SweepResult, reference_beta: float | None = None,
                       ratio: float = 1.15) -> RateFit:
    """Plateau test for ``sup lambda1(Hess u_beta)``.

    Passes when the last value is at most ``ratio`` times the value at
    ``reference_beta`` (default: the middle of the sweep).  The sup of third
    derivatives is recorded for contrast only.
    """
    if len(sweep) < 4:
        raise ValueError("hessian uniformity needs a sweep of at least four betas")
    sols = list(sweep.solutions)
    lam = tuple(real_hessian_lambda1(s.u_beta).max() for s in sols)
    third = tuple(third_derivative_sup(s.u_beta) for s in sols)
    i_ref = len(sols) // 2 if reference_beta is None else sweep.betas.index(reference_beta)
    base = lam[i_ref]
    if base > 0:
        plateau = lam[-1] / base
    else:
        plateau = 1.0 if lam[-1] <= 1e-12 else math.inf
    return RateFit(
        betas=tuple(sweep.betas),
        passed=bool(plateau <= ratio),
        reference=f"beta={sols[i_ref].beta:g}",
        sup_lambda1=lam,
        plateau_ratio=plateau,
        sup_third=third,
    )


def ma_mass_check(env: EnvelopeResult) -> float:
    """Relative error of ``int_{contact} theta^n`` against ``int omega^n``."""
    mask = np.asarray(env.contact_mask, dtype=bool)
    if not mask.any():
        raise ContactError("empty contact set: the mass identity cannot hold")
    v = env.obstacle
    theta = theta_density(v)
    vol = v.geometry.volume
    mass = integrate(theta.like(np.where(mask, theta.values, 0.0)))
    return abs(mass - vol) / vol


def free_boundary_collar(mask: np.ndarray, width: int = 2) -> np.ndarray:
    """Nodes within ``width`` cells (box distance) of a contact/non-contact edge."""
    mask = np.asarray(mask, dtype=bool)
    edge = np.zeros_like(mask)
    for a in range(mask.ndim):
        edge |= mask != np.roll(mask, 1, a)
        edge |= mask != np.roll(mask, -1, a)
    out = edge.copy()
    for a in range(mask.ndim):
        grown = out.copy()
        for s in range(1, width + 1):
            grown |= np.roll(out, s, a) | np.roll(out, -s, a)
        out = grown
    return out


def ma_concentration_check(env: EnvelopeResult, collar: int = 2) -> float:
    """Fraction of Monge-Ampere mass found off the contact set, collar excluded."""
    mask = np.asarray(env.contact_mask, dtype=bool)
    off = ~mask & ~free_boundary_collar(mask, collar)
    dens = env.ma_density
    total = integrate(dens)
    if total <= 0:
        raise ContactError("nonpositive total Monge-Ampere mass")
    return integrate(dens.like(np.where(off, np.abs(dens.values), 0.0))) / total


def contact_hessian_tolerance(v: GridField) -> float:
    return 10.0 * (2 * math.pi) ** 4 * v.sup_norm() * v.h**2


def contact_hessian_check(env: EnvelopeResult, collar: int = 2) -> float:
    """sup over interior contact nodes of the norm of the difference Hessian of ``u_theta``."""
    mask = np.asarray(env.contact_mask, dtype=bool)
    interior = mask & ~free_boundary_collar(mask, collar)
    if not interior.any():
        return 0.0
    R = real_hessian(env.u_theta, method="fd")[interior]
    return float(np.max(np.abs(np.linalg.eigvalsh(R))))


def h_lambda(v: GridField) -> float:
    """``lambda = 1 / (1 + 2 sup |dv|^2_g)``."""
    return 1.0 / (1.0 + 2.0 * gradient_norm_sq(v).max())


def q_diagnostic(sol: BetaSolution, A: float = 10.0) -> DiagnosticsReport:
    """``Q = log lambda1(Hess phi) + h(|d phi|^2) - A phi`` on ``{lambda1 > 0}``,
    with ``h(s) = -(lambda/2) log(1 + sup|d phi|^2 - s)``."""
    phi = sol.phi
    lam = h_lambda(sol.obstacle)
    lam1 = real_hessian_lambda1(phi)
    s = gradient_norm_sq(phi)
    S = s.max()
    gap = 1.0 + S - s.values
    h = -0.5 * lam * np.log(gap)
    h1 = 0.5 * lam / gap
    h2 = 0.5 * lam / gap**2
    defect = float(np.max(np.abs(h2 - (2.0 / lam) * h1**2)))
    eps = 1e-14
    bounds_ok = bool(np.all(h1 <= lam / 2 + eps) and np.all(h1 >= lam / (2 + 2 * S) - eps)
                     and np.all(h2 >= 2 * h1**2 - eps))
    dom = lam1.values > 0
    q = np.full(phi.values.shape, np.nan)
    if dom.any():
        q[dom] = np.log(lam1.values[dom]) + h[dom] - A * phi.values[dom]
        idx = np.unravel_index(int(np.nanargmax(q)), q.shape)
        coords = grid_coords(phi.geometry, phi.N)
        argmax = tuple(float(c[idx]) for c in coords)
        sup_q, note = float(q[idx]), ""
    else:
        sup_q, argmax, note = None, None, "empty Q domain: lambda1 <= 0 at every node"
    return DiagnosticsReport(
        beta=sol.beta, A=A, lam=lam, lambda1_field=lam1, grad_sq_field=s,
        h=h, h_prime=h1, h_second=h2, q_values=q, q_domain=dom,
        sup_lambda1=lam1.max(), sup_q=sup_q, argmax_q=argmax,
        h_identity_defect=defect, h_bounds_ok=bounds_ok, note=note,
    )
