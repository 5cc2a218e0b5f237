"""Named obstacle presets.

``const``                 v = 0
``const-c<c>``            v = c
``cos-a<a>``              v = a cos(2 pi x1)   (alias ``cos-a<a>-x``)
``cos-a<a>-y``            v = a cos(2 pi y1)
``cossum-a<a>``           v = a (cos 2 pi x1 + ... + cos 2 pi xn)
``random-k<k>-a<a>``      band-limited random trigonometric polynomial,
``random-s<s>-k<k>-a<a>`` modes with |k|_inf <= k, scaled to sup-norm a;
                          the seed defaults to the run seed

Anything else is read as a field dump path.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .fieldio import read_field
from .torus import GridField, TorusGeometry, grid_coords

__all__ = ["PresetError", "make_obstacle", "random_field"]

_NUM = r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"


class PresetError(ValueError):
    pass


def random_field(geom: TorusGeometry, N: int, seed: int, kmax: int, amp: float) -> GridField:
    """Real band-limited random field with ``sup|v| = amp`` and zero mean."""
    if not 1 <= kmax < N // 2:
        raise PresetError(f"kmax must lie in [1, {N // 2 - 1}]")
    rng = np.random.default_rng(seed)
    d = 2 * geom.complex_dim
    m = 2 * kmax + 1
    coeffs = rng.standard_normal((m,) * d) + 1j * rng.standard_normal((m,) * d)
    spec = np.zeros((N,) * d, dtype=complex)
    idx = np.r_[0:kmax + 1, N - kmax:N]
    spec[np.ix_(*([idx] * d))] = coeffs
    spec.flat[0] = 0.0
    vals = np.fft.ifftn(spec).real
    return GridField(geom, amp * vals / np.abs(vals).max())


def make_obstacle(spec: str, geom: TorusGeometry, N: int, seed: int = 0) -> GridField:
    spec = spec.strip()
    coords = grid_coords(geom, N)
    two_pi = 2 * np.pi
    if spec == "const":
        return GridField.constant(geom, N, 0.0)
    if m := re.fullmatch(rf"const-c{_NUM}", spec):
        return GridField.constant(geom, N, float(m.group(1)))
    if m := re.fullmatch(rf"cos-a{_NUM}(-x|-y)?", spec):
        a = float(m.group(1))
        axis = 1 if m.group(2) == "-y" else 0
        return GridField(geom, a * np.cos(two_pi * coords[axis]))
    if m := re.fullmatch(rf"cossum-a{_NUM}", spec):
        a = float(m.group(1))
        return GridField(geom, a * sum(np.cos(two_pi * c) for c in coords[0::2]))
    if m := re.fullmatch(rf"random(?:-s(\d+))?-k(\d+)-a{_NUM}", spec):
        s = int(m.group(1)) if m.group(1) is not None else seed
        return random_field(geom, N, s, int(m.group(2)), float(m.group(3)))
    path = Path(spec)
    if path.suffix in (".txt", ".tfld") or path.exists():
        f = read_field(path, geom)
        if f.N != N:
            raise PresetError(f"{path}: dump has N={f.N}, config has N={N}")
        return f
    raise PresetError(f"unknown obstacle preset {spec!r}")
