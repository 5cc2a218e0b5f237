"""Report figures, rendered off-screen to PNG."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

golden_mean = (math.sqrt(5) - 1.0) / 2.0
fig_width = 5.0
colors = ["#08589e", "#e6550d", "#31a354", "#756bb1", "#636363"]

params = {
    "axes.prop_cycle": matplotlib.cycler(color=colors),
    "axes.labelsize": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "font.family": "sans-serif",
    "mathtext.fontset": "stix",
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (fig_width, fig_width * golden_mean),
    "figure.dpi": 120,
    "savefig.dpi": 150,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps the PNG bytes reproducible
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def _column(rows, key):
    return np.array([np.nan if r.get(key) is None else r[key] for r in rows], dtype=float)


def plot_rate(rows, path, kappa=None, self_reference=False) -> Path:
    with plt.rc_context(params):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(2 * fig_width, fig_width * golden_mean))
        b = _column(rows, "beta")
        e = _column(rows, "e_beta")
        gap = _column(rows, "gap")
        if np.isfinite(e).any():
            ref = r"u_{\beta_{\max}}" if self_reference else r"u_\theta"
            ax0.loglog(b, e, "o-", label=rf"$\|u_\beta - {ref}\|_\infty$")
        if np.isfinite(gap).any():
            ax0.loglog(b, gap, "s--", label=r"$\|u_\beta - u_{\beta^-}\|_\infty$")
        if kappa:
            bb = b[b > 1]
            ax0.loglog(bb, kappa * np.log(bb) / bb, "k:", label=r"$\kappa\,\log\beta/\beta$")
        ax0.set_xlabel(r"$\beta$")
        ax0.set_ylabel("sup-norm error")
        ax0.legend()
        c = _column(rows, "c_beta")
        if np.isfinite(c).any():
            ax1.semilogx(b, c, "o-")
            ax1.axhline(2 * c[np.isfinite(c)][0], color="k", ls=":", label=r"$2\,c_{\beta_0}$")
            ax1.legend()
        ax1.set_xlabel(r"$\beta$")
        ax1.set_ylabel(r"$c_\beta = \beta e_\beta / \log\beta$")
        return _save(fig, path)


def plot_hessian(rows, path) -> Path:
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        b = _column(rows, "beta")
        ax.semilogx(b, _column(rows, "sup_lambda1"), "o-", label=r"$\sup\,\lambda_1(\nabla^2 u_\beta)$")
        third = _column(rows, "sup_third")
        if np.isfinite(third).any():
            ax2 = ax.twinx()
            ax2.loglog(b, third, "s--", color=colors[1], label=r"$\sup|\nabla^3 u_\beta|$")
            ax2.set_ylabel("third derivatives")
            ax2.grid(False)
            ax2.legend(loc="lower right")
        ax.set_xlabel(r"$\beta$")
        ax.set_ylabel("largest Hessian eigenvalue")
        ax.legend(loc="upper left")
        return _save(fig, path)


def plot_q(rows, path) -> Path:
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        b = _column(rows, "beta")
        ax.semilogx(b, _column(rows, "sup_q"), "o-")
        ax.set_xlabel(r"$\beta$")
        ax.set_ylabel(r"$\sup Q$")
        return _save(fig, path)


def plot_envelope(env, path) -> Path:
    """Obstacle and envelope along the first axis, contact nodes marked."""
    v = env.obstacle.values
    P = env.envelope.values
    mask = np.asarray(env.contact_mask)
    nd = v.ndim
    sl = (slice(None),) + (0,) * (nd - 1)
    x = np.arange(v.shape[0]) / v.shape[0]
    with plt.rc_context(params):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(2 * fig_width, fig_width * golden_mean))
        ax0.plot(x, v[sl], label="obstacle $v$")
        ax0.plot(x, P[sl], label="envelope $P(v)$")
        ax0.plot(x[mask[sl]], P[sl][mask[sl]], ".", ms=2, color="k", label="contact")
        ax0.set_xlabel("$x_1$")
        ax0.legend()
        img = (P - v)[(slice(None), slice(None)) + (0,) * (nd - 2)]
        im = ax1.imshow(img.T, origin="lower", extent=(0, 1, 0, 1), cmap="viridis")
        ax1.set_xlabel("$x_1$")
        ax1.set_ylabel("$y_1$" if nd == 2 else "$y_1$ (slice)")
        ax1.grid(False)
        fig.colorbar(im, ax=ax1, label=r"$u_\theta$")
        return _save(fig, path)
