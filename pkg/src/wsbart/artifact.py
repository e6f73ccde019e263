"""Binary model artifacts.

Layout: the magic bytes ``WSBART``, a little-endian ``uint16`` format
version, a ``uint32`` length followed by a UTF-8 JSON header, then one
section per array: ``uint16`` name length, name, ``uint64`` payload length
and an ``.npy`` payload.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .async_regression import AsyncFit, BandwidthPolicy, LagPolicy, RegressionSpec
from .sampler import AffineMap, PosteriorDraws, SamplerConfig

MAGIC = b"WSBART"
FORMAT_VERSION = 1


class ArtifactError(ValueError):
    pass


def schema_columns(p: int) -> list[str]:
    """Query columns a model expects: covariates ``v1..vp`` then ``time``."""
    return [f"v{k + 1}" for k in range(p)] + ["time"]


def schema_hash(columns) -> str:
    return hashlib.sha256(",".join(columns).encode()).hexdigest()[:16]


def _spec_to_dict(spec: RegressionSpec) -> dict:
    d = dataclasses.asdict(spec)
    d["sampler"]["move_probs"] = list(spec.sampler.move_probs)
    return d


def _spec_from_dict(d: dict) -> RegressionSpec:
    d = dict(d)
    bw = _policy(BandwidthPolicy, d.pop("bandwidth"))
    lag = _policy(LagPolicy, d.pop("lag"))
    sampler = _config(d.pop("sampler"))
    cv = d.pop("cv_sampler")
    return RegressionSpec(bandwidth=bw, lag=lag, sampler=sampler,
                          cv_sampler=None if cv is None else _config(cv), **d)


def _policy(cls, d):
    return cls(**{**d, "grid": tuple(d.get("grid", ()))})


def _config(d):
    return SamplerConfig(**{**d, "move_probs": tuple(d["move_probs"])})


def _npy_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(a), allow_pickle=False)
    return buf.getvalue()


def save_model(fit: AsyncFit, path, p: int, transforms: dict | None = None) -> None:
    """Write a fitted model; ``transforms`` records input preprocessing to replay at prediction."""
    draws = fit.draws
    arrays = draws.arrays()
    columns = schema_columns(p)
    header = {
        "format_version": FORMAT_VERSION,
        "schema": {"columns": columns, "hash": schema_hash(columns), "p": p},
        "spec": _spec_to_dict(fit.spec),
        "fit": {"bandwidth": fit.bandwidth, "inclusion": fit.inclusion, "lag": fit.lag,
                "n_cases": fit.n_cases},
        "draws": {"m": draws.m, "n_nodes": draws.n_nodes, "mode": draws.mode,
                  "response_shift": draws.response_map.shift,
                  "response_scale": draws.response_map.scale,
                  "acceptance": {k: list(v) for k, v in draws.acceptance.items()}},
        "transforms": transforms or {},
        "sections": list(arrays),
    }
    head = json.dumps(header, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", FORMAT_VERSION, len(head)))
        fh.write(head)
        for name, a in arrays.items():
            payload = _npy_bytes(a)
            fh.write(struct.pack("<H", len(name)))
            fh.write(name.encode())
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def _read(fh, n):
    b = fh.read(n)
    if len(b) != n:
        raise ArtifactError("truncated artifact")
    return b


def load_model(path) -> tuple[AsyncFit, dict]:
    """Read an artifact; returns the fitted model and the JSON header."""
    with Path(path).open("rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ArtifactError(f"{path} is not a model artifact")
        version, n = struct.unpack("<HI", _read(fh, 6))
        if version != FORMAT_VERSION:
            raise ArtifactError(f"unsupported artifact version {version}")
        header = json.loads(_read(fh, n).decode())
        arrays = {}
        for _ in header["sections"]:
            (k,) = struct.unpack("<H", _read(fh, 2))
            name = _read(fh, k).decode()
            (size,) = struct.unpack("<Q", _read(fh, 8))
            arrays[name] = np.load(io.BytesIO(_read(fh, size)), allow_pickle=False)
    if set(arrays) != set(header["sections"]):
        raise ArtifactError("artifact sections do not match its header")
    dh = header["draws"]
    draws = PosteriorDraws(
        m=dh["m"], n_nodes=dh["n_nodes"], mode=dh["mode"],
        response_map=AffineMap(dh["response_shift"], dh["response_scale"]),
        acceptance={k: tuple(v) for k, v in dh["acceptance"].items()},
        **arrays)
    fh_ = header["fit"]
    fit = AsyncFit(_spec_from_dict(header["spec"]), draws, fh_["bandwidth"], fh_["inclusion"],
                   fh_["lag"], fh_["n_cases"])
    return fit, header
