"""Damped Newton solver for the beta-family of complex Monge-Ampere equations

    det(g + i ddbar phi) = det(g) * exp(beta * (phi - v))

on the flat torus, with continuation in beta.

Newton is run on the density form ``F(phi) = det(g~)/det(g) - exp(beta(phi - v))``
rather than on its logarithm: once beta is large the density
``exp(beta u_beta)`` is far below double precision in the region where the
envelope detaches from the obstacle, and ``log det g~`` is then not
computable.  At a converged solution the density form pins
``det g~ = exp(beta(phi - v)) > 0``; the log form is still available as
:func:`ma_residual` for iterates where it makes sense.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.sparse.linalg as spla

from . import torus
from .torus import GridField, HermitianField, TorusGeometry, complex_hessian

log = logging.getLogger(__name__)

__all__ = [
    "SolverError",
    "PositivityError",
    "StagnationError",
    "BetaSolution",
    "SweepResult",
    "DEFAULT_SCHEDULE",
    "ma_residual",
    "density_residual",
    "positivity_margin",
    "max_principle_box",
    "solve_beta",
    "continuation_sweep",
    "invariant_axes",
    "quadratic_tail",
]

DEFAULT_SCHEDULE = tuple(float(2**k) for k in range(13))  # 1 .. 4096
_EXP_CAP = 700.0


class SolverError(RuntimeError):
    def __init__(self, msg, history=(), beta=None):
        super().__init__(msg)
        self.history = list(history)
        self.beta = beta


class PositivityError(SolverError):
    def __init__(self, msg, node=None, eigenvalue=None, **kw):
        super().__init__(msg, **kw)
        self.node = node
        self.eigenvalue = eigenvalue


class StagnationError(SolverError):
    pass


@dataclass(frozen=True, eq=False)
class BetaSolution:
    beta: float
    obstacle: GridField
    phi: GridField
    residual_sup: float
    newton_iters: int
    positivity_margin: float
    # min of beta*(phi - v): log of the smallest Monge-Ampere density, which
    # stays finite after exp() has underflowed
    log_density_min: float
    residual_history: tuple = ()
    records: tuple = field(default=(), repr=False)

    @property
    def u_beta(self) -> GridField:
        return self.phi - self.obstacle

    @property
    def geometry(self) -> TorusGeometry:
        return self.phi.geometry


@dataclass(frozen=True, eq=False)
class SweepResult:
    solutions: tuple
    # sup |u_{beta_{i+1}} - u_{beta_i}| between consecutive entries
    successive_gaps: tuple

    @property
    def betas(self) -> list[float]:
        return [s.beta for s in self.solutions]

    @property
    def obstacle(self) -> GridField:
        return self.solutions[0].obstacle

    def __len__(self):
        return len(self.solutions)

    def __getitem__(self, i):
        return self.solutions[i]

    def at(self, beta: float) -> BetaSolution:
        for s in self.solutions:
            if s.beta == beta:
                return s
        raise KeyError(beta)


def _gtilde(phi: GridField) -> np.ndarray:
    geom = phi.geometry
    return geom.metric + complex_hessian(phi).values


def _relative_eigs(gt: np.ndarray, geom: TorusGeometry) -> np.ndarray:
    if not geom.is_identity:
        Linv = np.linalg.inv(np.linalg.cholesky(geom.metric))
        gt = Linv @ gt @ Linv.conj().T
    if gt.shape[-1] == 1:
        return gt.real
    a, d = gt[..., 0, 0].real, gt[..., 1, 1].real
    mid = 0.5 * (a + d)
    rad = np.sqrt(0.25 * (a - d) ** 2 + np.abs(gt[..., 0, 1]) ** 2)
    return np.stack([mid - rad, mid + rad], axis=-1)


def positivity_margin(phi: GridField) -> float:
    """Smallest eigenvalue of ``g + i ddbar phi`` relative to ``g`` over all nodes."""
    return float(_relative_eigs(_gtilde(phi), phi.geometry)[..., 0].min())


def _density(phi: GridField) -> np.ndarray:
    gt = HermitianField(phi.geometry, _gtilde(phi))
    return gt.det() / phi.geometry.volume


def ma_residual(phi: GridField, v: GridField, beta: float) -> GridField:
    """``log det g~ - log det g - beta (phi - v)`` at every node.

    Raises PositivityError (worst node and eigenvalue attached) if ``g~`` is
    not positive definite somewhere.
    """
    phi.check_same_grid(v)
    geom = phi.geometry
    gt = _gtilde(phi)
    eigs = _relative_eigs(gt, geom)[..., 0]
    if eigs.min() <= 0:
        node = np.unravel_index(np.argmin(eigs), eigs.shape)
        raise PositivityError(
            f"g + i ddbar phi not positive at node {node}: eigenvalue {eigs[node]:.3e}",
            node=node,
            eigenvalue=float(eigs[node]),
            beta=beta,
        )
    dens = HermitianField(geom, gt).det() / geom.volume
    return phi.like(np.log(dens) - beta * (phi.values - v.values))


def density_residual(phi: GridField, v: GridField, beta: float) -> GridField:
    """``det g~ / det g - exp(beta (phi - v))``; the form Newton drives to zero."""
    phi.check_same_grid(v)
    expo = np.minimum(beta * (phi.values - v.values), _EXP_CAP)
    return phi.like(_density(phi) - np.exp(expo))


def max_principle_box(v: GridField, beta: float) -> tuple[float, float]:
    """Bounds on ``u_beta`` from evaluating the equation at its extrema.

    At a maximum of ``u_beta`` the density is at most that of ``theta``; at
    a minimum at least.  The lower bound is ``-inf`` when ``theta`` is not
    positive everywhere.
    """
    dens = HermitianField(v.geometry, _gtilde(v)).det() / v.geometry.volume
    hi = math.log(dens.max()) / beta if dens.max() > 0 else math.inf
    lo = math.log(dens.min()) / beta if dens.min() > 0 else -math.inf
    return lo, hi


def _coefficients(phi: GridField):
    """Real second-order coefficients of the linearized density operator.

    ``d/dt det(g~ + t i ddbar w) = sum_{jk} adj(g~)_{jk} (i ddbar w)_{kj}``,
    rewritten as ``sum_{ab} C_ab d_a d_b w`` over the real coordinates.
    """
    geom = phi.geometry
    n = geom.complex_dim
    if n == 1:
        C = np.eye(2) / (4.0 * geom.volume)
        return C, True
    gt = _gtilde(phi)
    adj = np.empty_like(gt)
    adj[..., 0, 0] = gt[..., 1, 1]
    adj[..., 1, 1] = gt[..., 0, 0]
    adj[..., 0, 1] = -gt[..., 0, 1]
    adj[..., 1, 0] = -gt[..., 1, 0]
    adj /= geom.volume
    P, Q = adj.real, adj.imag
    C = np.empty(gt.shape[:-2] + (2 * n, 2 * n))
    x, y = slice(0, 2 * n, 2), slice(1, 2 * n, 2)
    C[..., x, x] = 0.25 * P
    C[..., y, y] = 0.25 * P
    C[..., x, y] = 0.25 * Q
    C[..., y, x] = 0.25 * np.swapaxes(Q, -1, -2)
    return C, False


def _symbol(N: int, ndim: int, Cbar: np.ndarray) -> np.ndarray:
    ks = torus._wavenumbers(N, ndim)
    sym = 0.0
    for a in range(ndim):
        for b in range(ndim):
            if Cbar[a, b] != 0.0:
                sym = sym + Cbar[a, b] * ks[a] * ks[b]
    return -4.0 * np.pi**2 * sym


def invariant_axes(v: GridField) -> tuple[int, ...]:
    """Axes along which ``v`` is exactly constant.

    The solution inherits every such invariance (uniqueness plus translation
    equivariance), so Newton corrections can be computed on the quotient grid.
    """
    vals = v.values
    return tuple(
        a for a in range(vals.ndim) if np.array_equal(vals, np.broadcast_to(vals.take([0], axis=a), vals.shape))
    )


def _collocation_matrices(N: int):
    """Dense 1D spectral first and second derivative matrices (Nyquist as in torus)."""
    eye = np.eye(N)
    k = scipy.fft.fftfreq(N, 1.0 / N)
    s1 = 2j * np.pi * k
    s1[np.abs(k) == N // 2] = 0.0
    s2 = -((2 * np.pi * k) ** 2)
    F = scipy.fft.fft(eye, axis=0)
    D1 = scipy.fft.ifft(s1[:, None] * F, axis=0).real
    D2 = scipy.fft.ifft(s2[:, None] * F, axis=0).real
    return D1, D2


class _NewtonOperator:
    """``w -> sum C_ab d_a d_b w - r w``: the density-form Jacobian."""

    def __init__(self, phi: GridField, react: np.ndarray):
        self.shape = phi.values.shape
        self.N = phi.N
        self.geom = phi.geometry
        self.C, self.constant = _coefficients(phi)
        self.react = react
        ndim = len(self.shape)
        Cbar = self.C if self.constant else self.C.reshape(-1, ndim, ndim).mean(axis=0)
        self.sym_const = _symbol(self.N, ndim, Cbar) if self.constant else None
        # react.mean() > 0 whenever beta > 0, so this symbol never vanishes
        self.pc_symbol = _symbol(self.N, ndim, Cbar) - float(react.mean())

    def second_order(self, w: np.ndarray) -> np.ndarray:
        if self.constant:
            return torus._irfft(torus._rfft(w) * self.sym_const, self.shape)
        R = torus.real_hessian(GridField(self.geom, w))
        return np.einsum("...ab,...ab->...", self.C, R)

    def matvec(self, w):
        w = w.reshape(self.shape)
        return (self.second_order(w) - self.react * w).ravel()

    def neg_matvec(self, w):
        return -self.matvec(w)

    def precond(self, w):
        w = w.reshape(self.shape)
        return torus._irfft(torus._rfft(w) / self.pc_symbol, self.shape).ravel()

    def solve_krylov(self, rhs: np.ndarray, rtol: float) -> tuple[np.ndarray, int]:
        """Preconditioned by the flat constant-coefficient inverse (exact in Fourier space)."""
        size = rhs.size
        count = [0]

        def cb(_):
            count[0] += 1

        if self.constant:
            # -(L - r) is symmetric positive definite here
            A = spla.LinearOperator((size, size), self.neg_matvec)
            M = spla.LinearOperator((size, size), lambda w: -self.precond(w))
            x, info = spla.cg(A, -rhs.ravel(), rtol=rtol, atol=0.0, M=M,
                              callback=cb, maxiter=20000)
        else:
            A = spla.LinearOperator((size, size), self.matvec)
            M = spla.LinearOperator((size, size), self.precond)
            x, info = spla.gmres(A, rhs.ravel(), rtol=rtol, atol=0.0, M=M,
                                 restart=100, maxiter=50, callback=cb,
                                 callback_type="pr_norm")
        if info < 0:
            raise SolverError(f"Krylov breakdown (info={info})")
        return x.reshape(self.shape), count[0]

    def solve_reduced(self, rhs: np.ndarray, keep: tuple[int, ...]) -> np.ndarray:
        """Dense collocation solve on the quotient grid spanned by ``keep`` axes."""
        ndim = len(self.shape)
        index = tuple(slice(None) if a in keep else 0 for a in range(ndim))
        D1, D2 = _collocation_matrices(self.N)
        eye = np.eye(self.N)
        C = self.C if self.constant else self.C[index]
        size = self.N ** len(keep)
        J = np.zeros((size, size))
        for i, a in enumerate(keep):
            for j, b in enumerate(keep):
                if j < i:
                    continue
                mats = [eye] * len(keep)
                if a == b:
                    mats[i] = D2
                    coef = C[..., a, a] if not self.constant else C[a, a]
                else:
                    mats[i] = D1
                    mats[j] = D1
                    coef = 2.0 * (C[..., a, b] if not self.constant else C[a, b])
                K = mats[0]
                for m in mats[1:]:
                    K = np.kron(K, m)
                J += np.ravel(coef)[:, None] * K if np.ndim(coef) else coef * K
        J -= np.diag(self.react[index].ravel())
        red = np.linalg.solve(J, rhs[index].ravel())
        shape = [self.N if a in keep else 1 for a in range(ndim)]
        return np.broadcast_to(red.reshape(shape), self.shape).copy()


def solve_beta(
    v: GridField,
    beta: float,
    init: GridField | None = None,
    tol: float = 1e-10,
    margin_floor: float | None = None,
    max_iter: int = 100,
    min_step: float = 2.0**-30,
    dense_limit: int = 1024,
) -> BetaSolution:
    """Solve ``(omega + i ddbar phi)^n = exp(beta (phi - v)) omega^n`` by damped Newton.

    Each step solves the linearization ``(Delta_{g~} - beta) dphi = -F``
    (density form), then backtracks on ``sup|F|`` while rejecting steps that
    push the smallest eigenvalue of ``g~`` below ``margin_floor``.

    The linear solve is a Krylov method preconditioned by the flat
    constant-coefficient inverse, except when the obstacle is invariant along
    some axes and the quotient grid has at most ``dense_limit`` nodes; then
    the collocation Jacobian is assembled on the quotient and solved directly.
    This matters for ``n = 2`` at large beta, where the Jacobian degenerates
    on the flat parts of the envelope.

    In complex dimension one every root of the density form is
    automatically Kaehler, so ``margin_floor`` defaults to ``-inf``.  For
    ``n = 2`` the default floor is ``-sqrt(sup|F(trial)|)``: where both
    eigenvalues of the envelope's form vanish the equation is quadratically
    degenerate and eigenvalues of that size and either sign are not resolved
    by the residual, while the negative-definite branch (``det g~ > 0``
    there too) stays excluded.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if margin_floor is not None:
        floor = lambda r: margin_floor  # noqa: E731
    elif v.geometry.complex_dim == 1:
        floor = lambda r: -math.inf  # noqa: E731
    else:
        floor = lambda r: -math.sqrt(max(r, tol))  # noqa: E731
    if init is None:
        phi = GridField.constant(v.geometry, v.N, v.min())
    else:
        v.check_same_grid(init)
        phi = init
        pm = positivity_margin(phi)
        if pm < floor(float(np.abs(density_residual(phi, v, beta).values).max())):
            raise PositivityError(
                f"initial guess is not admissible (margin {pm:.3e})", eigenvalue=pm, beta=beta
            )

    keep = tuple(a for a in range(v.values.ndim) if a not in invariant_axes(v))
    if init is not None and not set(invariant_axes(init)) >= set(range(v.values.ndim)) - set(keep):
        keep = tuple(range(v.values.ndim))
    use_dense = v.N ** len(keep) <= dense_limit

    def residual(p):
        return density_residual(p, v, beta).values

    F = residual(phi)
    rn = float(np.abs(F).max())
    history = [rn]
    records = [dict(beta=beta, iteration=0, residual=rn, step_length=0.0,
                    positivity_margin=positivity_margin(phi), krylov_iters=0)]
    it = 0
    while rn > tol:
        if it >= max_iter:
            raise StagnationError(
                f"no convergence in {max_iter} Newton steps at beta={beta}",
                history=history, beta=beta,
            )
        react = beta * np.exp(np.minimum(beta * (phi.values - v.values), _EXP_CAP))
        op = _NewtonOperator(phi, react)
        rtol = max(min(1e-4, 1e-2 * rn), 1e-13)
        if use_dense:
            delta, kits = op.solve_reduced(-F, keep), 0
        else:
            delta, kits = op.solve_krylov(-F, rtol)
        t = 1.0
        while True:
            trial = phi.like(phi.values + t * delta)
            Ft = residual(trial)
            rt = float(np.abs(Ft).max())
            margin = positivity_margin(trial)
            if np.isfinite(rt) and rt <= (1.0 - 1e-4 * t) * rn and margin >= floor(rt):
                break
            t *= 0.5
            if t < min_step:
                raise StagnationError(
                    f"line search floor reached at beta={beta} (residual {rn:.3e})",
                    history=history, beta=beta,
                )
        phi, F, rn = trial, Ft, rt
        it += 1
        history.append(rn)
        rec = dict(beta=beta, iteration=it, residual=rn, step_length=t,
                   positivity_margin=margin, krylov_iters=kits)
        records.append(rec)
        log.debug("newton %s", rec)

    return BetaSolution(
        beta=float(beta),
        obstacle=v,
        phi=phi,
        residual_sup=rn,
        newton_iters=it,
        positivity_margin=positivity_margin(phi),
        log_density_min=float(np.min(beta * (phi.values - v.values))),
        residual_history=tuple(history),
        records=tuple(records),
    )


def continuation_sweep(
    v: GridField, schedule=DEFAULT_SCHEDULE, tol: float = 1e-10, **kw
) -> SweepResult:
    """Solve along an increasing beta schedule, warm-starting each solve."""
    schedule = [float(b) for b in schedule]
    if not schedule:
        raise ValueError("empty beta schedule")
    if any(b1 <= b0 for b0, b1 in zip(schedule, schedule[1:])):
        raise ValueError("beta schedule must be strictly increasing")
    sols = []
    init = None
    for beta in schedule:
        try:
            sol = solve_beta(v, beta, init=init, tol=tol, **kw)
        except SolverError as exc:
            exc.beta = beta
            exc.args = (f"continuation failed at beta={beta:g}: {exc.args[0]}",)
            raise
        log.info("beta=%g newton_iters=%d residual=%.2e", beta, sol.newton_iters, sol.residual_sup)
        sols.append(sol)
        init = sol.phi
    gaps = tuple(
        (b.u_beta - a.u_beta).sup_norm() for a, b in zip(sols, sols[1:])
    )
    return SweepResult(tuple(sols), gaps)


def quadratic_tail(history, c: float = 1.0, floor: float = 1e-10, steps: int = 3) -> bool:
    """True if each of the last ``steps`` Newton steps obeys ``r+ <= max(c r^2, floor)``.

    ``floor`` is where round-off in the spectral second derivatives takes
    over and quadratic contraction can no longer be observed.
    """
    h = list(history)
    if len(h) < 2:
        return True
    pairs = list(zip(h[:-1], h[1:]))[-steps:]
    return all(r1 <= max(c * r0 * r0, floor) for r0, r1 in pairs)
