"""Binary on-disk cache for assembled bases and collision matrices.

Layout of a cache file: magic "KSLB", little-endian u32 format version,
little-endian u32 header length, a UTF-8 JSON header (basis parameters,
scalars, and an ordered array directory), then the arrays themselves as
row-major little-endian 64-bit floats.  A JSON manifest next to the binary
lists dimensions and SHA-256 checksums so corruption is detected before
anything is deserialized; a mismatch triggers a rebuild, never a crash.

Files are keyed by a content hash of the basis parameters, so changing any
resolution knob creates a fresh cache entry instead of clobbering an old one.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .collision_ops import CollisionMatrices, GammaTensor, assemble_collision, hermite_sub_indices
from .velocity_basis import Basis, BasisSpec, build_basis

_MAGIC = b"KSLB"
_VERSION = 1
_ENV_VAR = "KSL_CACHE"
_DEFAULT_DIR = ".kslab_cache"


class CacheError(RuntimeError):
    """Missing, malformed, or checksum-failing cache artifacts."""


def resolve_cache_dir(explicit: str | os.PathLike | None = None) -> Path:
    """Cache directory: the KSL_CACHE variable wins over any explicit choice."""
    env = os.environ.get(_ENV_VAR)
    if env:
        return Path(env)
    if explicit is not None:
        return Path(explicit)
    return Path(_DEFAULT_DIR)


def _spec_payload(spec: BasisSpec) -> dict:
    return {
        "radial_order": spec.radial_order,
        "angular_max": spec.angular_max,
        "sectors": sorted(spec.sectors),
        "quad_points": spec.resolved_quad_points(),
    }


def cache_paths(spec: BasisSpec, directory: Path) -> tuple[Path, Path]:
    key = spec.content_key()
    return (directory / f"collision_{key}.kslb",
            directory / f"collision_{key}.manifest.json")


def _array_entries(cm: CollisionMatrices) -> list[tuple[str, np.ndarray]]:
    basis = cm.basis
    out = [
        ("quad_u", basis.quad.u),
        ("quad_r", basis.quad.r),
        ("quad_wr", basis.quad.wr),
        ("quad_wr_half", basis.quad.wr_half),
        ("quad_c", basis.quad.c),
        ("quad_wc", basis.quad.wc),
        ("ang0", basis.ang0),
        ("ang1", basis.ang1),
        ("gram", basis.gram),
    ]
    for l in sorted(basis.radial_tables):
        out.append((f"radial_table_{l}", basis.radial_tables[l]))
    for name, table in (("nu", cm.nu_deg), ("K", cm.K_deg), ("K1", cm.K1_deg)):
        for l in sorted(table):
            out.append((f"{name}_deg_{l}", table[l]))
    for name, table in (("L", cm.L_sector), ("L1", cm.L1_sector)):
        for sec in sorted(table):
            out.append((f"{name}_sector_{sec}", table[sec]))
    if cm.gamma.change_of_basis is not None:
        out.append(("gamma_tensor", cm.gamma.tensor))
        out.append(("gamma_chi_sub", cm.gamma.chi_sub))
        out.append(("gamma_change_of_basis", cm.gamma.change_of_basis))
        if cm.gamma.L_sub is not None:
            out.append(("gamma_L_sub", cm.gamma.L_sub))
            out.append(("gamma_L1_sub", cm.gamma.L1_sub))
    return out


def save_collision(cm: CollisionMatrices,
                   directory: str | os.PathLike) -> tuple[Path, Path]:
    """Write the binary cache plus its manifest; returns both paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bin_path, man_path = cache_paths(cm.basis.spec, directory)

    entries = _array_entries(cm)
    header = {
        "spec": _spec_payload(cm.basis.spec),
        "scalars": {
            "mu_estimate": cm.mu_estimate,
            "mu_argmax_degree": cm.mu_argmax_degree,
            "nu0": cm.nu0,
            "nu1": cm.nu1,
            "kernel_refinement_delta": cm.kernel_refinement_delta,
        },
        "raw_null_residuals": cm.raw_null_residuals,
        "has_gamma": cm.gamma.change_of_basis is not None,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in entries],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()

    payloads = []
    digests = []
    for _, arr in entries:
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        payloads.append(blob)
        digests.append(hashlib.sha256(blob).hexdigest())

    body = (_MAGIC + struct.pack("<II", _VERSION, len(header_bytes))
            + header_bytes + b"".join(payloads))
    bin_path.write_bytes(body)

    manifest = {
        "format": "KSLB",
        "version": _VERSION,
        "key": cm.basis.spec.content_key(),
        "spec": header["spec"],
        "arrays": [
            {"name": n, "shape": list(a.shape), "sha256": d}
            for (n, a), d in zip(entries, digests)
        ],
        "file_sha256": hashlib.sha256(body).hexdigest(),
    }
    man_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return bin_path, man_path


def _read_header(raw: bytes, path: Path) -> tuple[dict, int]:
    if raw[:4] != _MAGIC:
        raise CacheError(f"{path}: bad magic, not a cache file")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != _VERSION:
        raise CacheError(f"{path}: unsupported format version {version}")
    header = json.loads(raw[12:12 + hlen].decode())
    return header, 12 + hlen


def load_collision(spec: BasisSpec, directory: str | os.PathLike) -> CollisionMatrices:
    """Reload matrices for this basis; every checksum is verified first."""
    directory = Path(directory)
    bin_path, man_path = cache_paths(spec, directory)
    if not bin_path.exists() or not man_path.exists():
        raise CacheError(f"no cache entry for key {spec.content_key()} in {directory}")
    raw = bin_path.read_bytes()
    manifest = json.loads(man_path.read_text())
    if manifest.get("file_sha256") != hashlib.sha256(raw).hexdigest():
        raise CacheError(f"{bin_path}: checksum mismatch against manifest")

    header, offset = _read_header(raw, bin_path)
    if header["spec"] != _spec_payload(spec):
        raise CacheError(f"{bin_path}: stored basis parameters do not match")

    arrays = {}
    for entry, listed in zip(header["arrays"], manifest["arrays"]):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        blob = raw[offset:offset + 8 * count]
        if hashlib.sha256(blob).hexdigest() != listed["sha256"]:
            raise CacheError(f"{bin_path}: checksum mismatch in array {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
        offset += 8 * count

    basis = build_basis(spec)
    basis.quad.u = arrays["quad_u"]
    basis.quad.r = arrays["quad_r"]
    basis.quad.wr = arrays["quad_wr"]
    basis.quad.wr_half = arrays["quad_wr_half"]
    basis.quad.c = arrays["quad_c"]
    basis.quad.wc = arrays["quad_wc"]
    basis.ang0 = arrays["ang0"]
    basis.ang1 = arrays["ang1"]
    basis.gram = arrays["gram"]
    for l in sorted(basis.radial_tables):
        basis.radial_tables[l] = arrays[f"radial_table_{l}"]

    def per_degree(name):
        out = {}
        for key, arr in arrays.items():
            if key.startswith(f"{name}_deg_"):
                out[int(key.rsplit("_", 1)[1])] = arr
        return out

    def per_sector(name):
        out = {}
        for key, arr in arrays.items():
            if key.startswith(f"{name}_sector_"):
                out[int(key.rsplit("_", 1)[1])] = arr
        return out

    if header["has_gamma"]:
        gamma = GammaTensor(
            indices=hermite_sub_indices(),
            tensor=arrays["gamma_tensor"],
            chi_sub=arrays["gamma_chi_sub"],
            change_of_basis=arrays["gamma_change_of_basis"],
            L_sub=arrays.get("gamma_L_sub"),
            L1_sub=arrays.get("gamma_L1_sub"),
        )
    else:
        gamma = GammaTensor(hermite_sub_indices(), np.zeros((35, 35, 35)),
                            np.zeros((5, 35)), None, None, None)

    scalars = header["scalars"]
    return CollisionMatrices(
        basis=basis,
        K_deg=per_degree("K"),
        K1_deg=per_degree("K1"),
        nu_deg=per_degree("nu"),
        L_sector=per_sector("L"),
        L1_sector=per_sector("L1"),
        mu_estimate=scalars["mu_estimate"],
        mu_argmax_degree=int(scalars["mu_argmax_degree"]),
        nu0=scalars["nu0"],
        nu1=scalars["nu1"],
        raw_null_residuals=header["raw_null_residuals"],
        gamma=gamma,
        kernel_refinement_delta=scalars["kernel_refinement_delta"],
    )


def load_or_assemble(spec: BasisSpec, directory: str | os.PathLike | None = None,
                     build_gamma: bool = True,
                     warn=None) -> tuple[CollisionMatrices, str]:
    """Cached matrices when the entry is sound, a fresh (re)build otherwise.

    Returns the matrices and a status: "loaded", "built" (no entry yet), or
    "rebuilt" (entry existed but failed validation; the warn callback gets
    the reason).  A cached entry without the bilinear tensor is rebuilt when
    the caller asks for it.
    """
    directory = resolve_cache_dir(directory)
    try:
        cm = load_collision(spec, directory)
        if build_gamma and cm.gamma.change_of_basis is None:
            raise CacheError("cache entry lacks the bilinear collision tensor")
        return cm, "loaded"
    except CacheError as exc:
        bin_path, _ = cache_paths(spec, directory)
        status = "rebuilt" if bin_path.exists() else "built"
        if status == "rebuilt" and warn is not None:
            warn(f"cache entry invalid ({exc}); rebuilding")
        cm = assemble_collision(build_basis(spec), build_gamma=build_gamma)
        save_collision(cm, directory)
        return cm, status
