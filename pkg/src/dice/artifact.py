"""Binary model files.

Layout: 8-byte magic, little-endian uint32 format version, uint64 header
length, a UTF-8 JSON header (shapes, hyper-parameters, names, checksums),
then raw little-endian float64 blocks in header order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .cohort import Normalization
from .significance import SignificanceResult
from .trainer import DiceHyper, DiceModel

MAGIC = b"DICEMDL\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class ArtifactError(Exception):
    pass


class CorruptArtifactError(ArtifactError):
    pass


class VersionMismatchError(ArtifactError):
    pass


def _blocks(model: DiceModel) -> dict:
    blocks = {f"param:{k}": v for k, v in sorted(model.params.items())}
    blocks["centers"] = model.centers
    blocks["outcome_coef"] = model.outcome_coef
    blocks["norm_mean"] = model.normalization.mean
    blocks["norm_std"] = model.normalization.std
    blocks["train_outcome_ratio"] = model.train_outcome_ratio
    if model.train_hard is not None:
        blocks["train_hard"] = np.asarray(model.train_hard, dtype=np.float64)
    if model.significance is not None:
        blocks["sig_p"] = model.significance.p_values
        blocks["sig_g"] = model.significance.g_stats
    return {k: np.ascontiguousarray(v, dtype="<f8") for k, v in blocks.items()}


def fingerprint(model: DiceModel) -> str:
    """Hash of everything that fixes the model's input contract and behavior."""
    ident = {
        "K": model.K,
        "d": model.d,
        "kind": model.kind,
        "hyper": model.hyper.to_dict(),
        "features": list(model.feature_names),
        "confounders": list(model.confounder_names),
        "sequential": model.normalization.sequential,
    }
    return hashlib.sha256(json.dumps(ident, sort_keys=True).encode()).hexdigest()[:16]


def save_model(model: DiceModel, path) -> None:
    blocks = _blocks(model)
    payload = b"".join(b.tobytes() for b in blocks.values())
    sig = model.significance
    header = {
        "K": model.K,
        "d": model.d,
        "kind": model.kind,
        "hyper": model.hyper.to_dict(),
        "feature_names": list(model.feature_names),
        "confounder_names": list(model.confounder_names),
        "day_scale": model.normalization.day_scale,
        "sequential": model.normalization.sequential,
        "train_ids": list(model.train_ids),
        "significance": None if sig is None else {
            "eligible": sig.eligible, "alpha": sig.alpha, "alpha_g": sig.alpha_g,
            "empty_clusters": sig.empty_clusters, "warnings": int(sig.warnings),
        },
        "fingerprint": fingerprint(model),
        "blocks": [{"name": k, "shape": list(v.shape)} for k, v in blocks.items()],
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)))
        fh.write(head)
        fh.write(payload)


def read_header(path) -> dict:
    return _read(path)[0]


def _read(path):
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CorruptArtifactError(f"{path}: corrupt artifact (file too short)")
    magic, version, head_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptArtifactError(f"{path}: corrupt artifact (bad magic)")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: artifact format {version}, this build reads {FORMAT_VERSION}")
    start = _PREFIX.size
    if len(raw) < start + head_len:
        raise CorruptArtifactError(f"{path}: corrupt artifact (truncated header)")
    try:
        header = json.loads(raw[start : start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptArtifactError(f"{path}: corrupt artifact (unreadable header)") from exc
    payload = raw[start + head_len :]
    if len(payload) != header.get("payload_bytes"):
        raise CorruptArtifactError(f"{path}: corrupt artifact (payload is {len(payload)} bytes, expected {header.get('payload_bytes')})")
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CorruptArtifactError(f"{path}: corrupt artifact (checksum mismatch)")
    return header, payload


def load_model(path) -> DiceModel:
    header, payload = _read(path)
    arrays = {}
    offset = 0
    for spec in header["blocks"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        arrays[spec["name"]] = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * n
    params = {k.split(":", 1)[1]: v for k, v in arrays.items() if k.startswith("param:")}
    norm = Normalization(arrays["norm_mean"], arrays["norm_std"], float(header["day_scale"]), bool(header["sequential"]))
    sig = None
    if header["significance"] is not None:
        s = header["significance"]
        sig = SignificanceResult(arrays["sig_p"], arrays["sig_g"], s["eligible"], s["alpha"], s["alpha_g"],
                                 s["empty_clusters"], s["warnings"])
    model = DiceModel(
        K=int(header["K"]),
        d=int(header["d"]),
        kind=header["kind"],
        params=params,
        centers=arrays["centers"],
        outcome_coef=arrays["outcome_coef"],
        hyper=DiceHyper.from_dict(header["hyper"]),
        normalization=norm,
        feature_names=tuple(header["feature_names"]),
        confounder_names=tuple(header["confounder_names"]),
        train_ids=list(header["train_ids"]),
        train_hard=arrays["train_hard"].astype(int) if "train_hard" in arrays else None,
        train_outcome_ratio=arrays["train_outcome_ratio"],
        significance=sig,
    )
    if fingerprint(model) != header["fingerprint"]:
        raise CorruptArtifactError(f"{path}: corrupt artifact (fingerprint mismatch)")
    return model
