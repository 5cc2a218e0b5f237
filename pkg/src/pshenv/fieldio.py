"""Field dumps, archives and checksummed manifests.

Text dump::

    torus-field v1; n=<n>; N=<N>
    <value>            one node per line, row-major, 17 significant digits

Binary dump: the 4 magic bytes ``TFLD``, then little-endian uint32 version
(1), n and N, then the ``N**(2n)`` node values as little-endian float64 in
row-major order.
"""
from __future__ import annotations

import hashlib
import json
import re
import struct
from pathlib import Path

import numpy as np

from .torus import GridField, TorusGeometry, build_geometry

__all__ = [
    "ArtifactError",
    "write_field",
    "read_field",
    "sha256_file",
    "write_manifest",
    "read_manifest",
    "load_manifest_fields",
    "write_jsonl",
    "read_jsonl",
    "archive_solution",
    "archive_sweep",
    "archive_envelope",
    "load_sweep",
    "load_envelope",
]

MAGIC = b"TFLD"
_HEADER_RE = re.compile(r"^torus-field v1; n=(\d+); N=(\d+)\s*$")
_BIN_HEADER = struct.Struct("<4sIII")
MANIFEST = "manifest.json"


class ArtifactError(RuntimeError):
    """Missing, malformed or tampered archive content."""


def write_field(path, field: GridField, binary: bool | None = None) -> Path:
    path = Path(path)
    if binary is None:
        binary = path.suffix == ".tfld"
    n = field.geometry.complex_dim
    flat = np.ascontiguousarray(field.values, dtype="<f8").ravel()
    if binary:
        with open(path, "wb") as fh:
            fh.write(_BIN_HEADER.pack(MAGIC, 1, n, field.N))
            fh.write(flat.tobytes())
    else:
        with open(path, "w") as fh:
            fh.write(f"torus-field v1; n={n}; N={field.N}\n")
            np.savetxt(fh, flat, fmt="%.17g")
    return path


def read_field(path, geometry: TorusGeometry | None = None) -> GridField:
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"field dump not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        raw = path.read_bytes()
        if len(raw) < _BIN_HEADER.size:
            raise ArtifactError(f"{path}: truncated header")
        _, version, n, N = _BIN_HEADER.unpack_from(raw)
        if version != 1:
            raise ArtifactError(f"{path}: unsupported binary version {version}")
        vals = np.frombuffer(raw, dtype="<f8", offset=_BIN_HEADER.size)
    else:
        with open(path) as fh:
            m = _HEADER_RE.match(fh.readline())
            if not m:
                raise ArtifactError(f"{path}: missing 'torus-field v1' header")
            n, N = int(m.group(1)), int(m.group(2))
            try:
                vals = np.loadtxt(fh, dtype=float, ndmin=1)
            except ValueError as exc:
                raise ArtifactError(f"{path}: {exc}") from exc
    if vals.size != N ** (2 * n):
        raise ArtifactError(f"{path}: expected {N ** (2 * n)} values, found {vals.size}")
    if geometry is None:
        geometry = build_geometry(n)
    elif geometry.complex_dim != n:
        raise ArtifactError(f"{path}: dump has n={n}, geometry has n={geometry.complex_dim}")
    return GridField(geometry, vals.reshape((N,) * (2 * n)).astype(float))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory, kind: str, files: list[str], meta: dict) -> Path:
    directory = Path(directory)
    sums = {name: sha256_file(directory / name) for name in files}
    doc = dict(kind=kind, files=sums, meta=meta)
    path = directory / MANIFEST
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def read_manifest(directory, verify: bool = True) -> dict:
    """Load a manifest; with ``verify`` every listed file must match its checksum."""
    directory = Path(directory)
    path = directory / MANIFEST
    if not path.is_file():
        raise ArtifactError(f"no manifest in {directory}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: {exc}") from exc
    if verify:
        for name, digest in doc.get("files", {}).items():
            f = directory / name
            if not f.is_file():
                raise ArtifactError(f"missing artifact {f}")
            if sha256_file(f) != digest:
                raise ArtifactError(f"checksum mismatch for {f}")
    return doc


def load_manifest_fields(directory, geometry=None) -> dict:
    doc = read_manifest(directory)
    return {name: read_field(Path(directory) / name, geometry)
            for name in doc["files"] if name.endswith((".txt", ".tfld"))}


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def write_jsonl(path, records) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, default=_jsonable) + "\n")
    return path


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _ext(binary: bool) -> str:
    return ".tfld" if binary else ".txt"


def _solution_meta(sol) -> dict:
    return dict(beta=sol.beta, residual_sup=sol.residual_sup, newton_iters=sol.newton_iters,
                positivity_margin=sol.positivity_margin, log_density_min=sol.log_density_min,
                residual_history=list(sol.residual_history))


def _metric_meta(geom: TorusGeometry) -> dict:
    return dict(n=geom.complex_dim, metric_re=geom.metric.real.tolist(),
                metric_im=geom.metric.imag.tolist())


def _geometry_from_meta(meta: dict) -> TorusGeometry:
    g = meta["geometry"]
    return build_geometry(g["n"], np.array(g["metric_re"]) + 1j * np.array(g["metric_im"]))


def archive_solution(directory, sol, binary: bool = False) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = _ext(binary)
    names = []
    for name, f in (("obstacle", sol.obstacle), ("phi", sol.phi), ("u_beta", sol.u_beta)):
        write_field(directory / (name + ext), f, binary)
        names.append(name + ext)
    write_jsonl(directory / "newton_log.jsonl", sol.records)
    names.append("newton_log.jsonl")
    meta = dict(geometry=_metric_meta(sol.geometry), solution=_solution_meta(sol))
    return write_manifest(directory, "beta-solution", names, meta)


def archive_sweep(directory, sweep, binary: bool = False) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = _ext(binary)
    names = ["obstacle" + ext]
    write_field(directory / names[0], sweep.obstacle, binary)
    records = []
    for i, sol in enumerate(sweep.solutions):
        name = f"phi_{i:02d}{ext}"
        write_field(directory / name, sol.phi, binary)
        names.append(name)
        records.extend(sol.records)
    write_jsonl(directory / "newton_log.jsonl", records)
    names.append("newton_log.jsonl")
    meta = dict(
        geometry=_metric_meta(sweep.obstacle.geometry),
        schedule=sweep.betas,
        successive_gaps=list(sweep.successive_gaps),
        solutions=[_solution_meta(s) for s in sweep.solutions],
    )
    return write_manifest(directory, "sweep", names, meta)


def load_sweep(directory):
    """Rebuild a SweepResult from an archive, verifying every checksum."""
    from .newton import BetaSolution, SweepResult

    directory = Path(directory)
    doc = read_manifest(directory)
    if doc.get("kind") != "sweep":
        raise ArtifactError(f"{directory} does not hold a sweep")
    meta = doc["meta"]
    geom = _geometry_from_meta(meta)
    ext = ".tfld" if "obstacle.tfld" in doc["files"] else ".txt"
    v = read_field(directory / ("obstacle" + ext), geom)
    log = read_jsonl(directory / "newton_log.jsonl")
    sols = []
    for i, sm in enumerate(meta["solutions"]):
        phi = read_field(directory / f"phi_{i:02d}{ext}", geom)
        sols.append(BetaSolution(
            beta=sm["beta"], obstacle=v, phi=phi, residual_sup=sm["residual_sup"],
            newton_iters=sm["newton_iters"], positivity_margin=sm["positivity_margin"],
            log_density_min=sm["log_density_min"],
            residual_history=tuple(sm["residual_history"]),
            records=tuple(r for r in log if r["beta"] == sm["beta"]),
        ))
    return SweepResult(tuple(sols), tuple(meta["successive_gaps"]))


def archive_envelope(directory, env, binary: bool = False) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = _ext(binary)
    fields = dict(obstacle=env.obstacle, envelope=env.envelope, u_theta=env.u_theta,
                  ma_density=env.ma_density,
                  contact_mask=env.obstacle.like(env.contact_mask.astype(float)))
    names = []
    for name, f in fields.items():
        write_field(directory / (name + ext), f, binary)
        names.append(name + ext)
    meta = dict(
        geometry=_metric_meta(env.geometry),
        method=env.method,
        contact_policy=env.contact_policy,
        contact_fraction=float(np.mean(env.contact_mask)),
        full_contact=bool(np.all(env.contact_mask)),
        beta_used=env.beta_used,
        psor_iterations=env.psor_iterations,
        error_estimate=env.error_estimate,
        params=env.params,
    )
    return write_manifest(directory, "envelope", names, meta)


def load_envelope(directory):
    from .envelope import EnvelopeResult

    directory = Path(directory)
    doc = read_manifest(directory)
    if doc.get("kind") != "envelope":
        raise ArtifactError(f"{directory} does not hold an envelope")
    meta = doc["meta"]
    geom = _geometry_from_meta(meta)
    ext = ".tfld" if "obstacle.tfld" in doc["files"] else ".txt"
    f = {k: read_field(directory / (k + ext), geom)
         for k in ("obstacle", "envelope", "ma_density", "contact_mask")}
    return EnvelopeResult(
        obstacle=f["obstacle"], envelope=f["envelope"], method=meta["method"],
        contact_mask=f["contact_mask"].values > 0.5, contact_policy=meta["contact_policy"],
        ma_density=f["ma_density"], beta_used=meta["beta_used"],
        psor_iterations=meta["psor_iterations"], error_estimate=meta["error_estimate"],
        params=meta["params"],
    )
