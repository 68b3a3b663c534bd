"""Versioned JSON persistence for trained models.

The envelope is a single JSON object with top-level fields
``format_version, method, spec, lambda, loss, payload, seeds`` (plus
``metadata``).  Arrays are embedded as base-64 of little-endian bytes with
explicit dtype and shape, so a round trip restores them bit for bit.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from .bags import Bag
from .errors import ModelCorruptError, ModelSchemaError, ModelVersionError
from .features import NystromMap, ProductRffMap, RffMap
from .kernels import KernelSpec
from .learner import DualPayload, LinearPayload, Model

FORMAT_VERSION = 1

_DTYPES = {"f8": "<f8", "i8": "<i8"}


def _encode_array(arr: np.ndarray, dtype: str = "f8") -> dict:
    a = np.ascontiguousarray(arr).astype(_DTYPES[dtype], copy=False)
    return {
        "dtype": dtype,
        "shape": list(a.shape),
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def _decode_array(obj, what: str) -> np.ndarray:
    try:
        dtype = _DTYPES[obj["dtype"]]
        shape = tuple(int(s) for s in obj["shape"])
        raw = base64.b64decode(obj["data"].encode("ascii"), validate=True)
        arr = np.frombuffer(raw, dtype=dtype).reshape(shape)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ModelSchemaError(f"bad array field {what!r}: {exc}") from exc
    return arr.astype(dtype.lstrip("<"), copy=True)


def _encode_bag(bag: Bag) -> dict:
    return {"task_id": bag.task_id, "points": _encode_array(bag.points)}


def _decode_bag(obj, what: str) -> Bag:
    try:
        task_id = obj["task_id"]
        pts = _decode_array(obj["points"], f"{what}.points")
    except (KeyError, TypeError) as exc:
        raise ModelSchemaError(f"bad bag field {what!r}: {exc}") from exc
    return Bag(task_id=str(task_id), points=pts)


def _encode_feature_map(fmap) -> dict:
    if isinstance(fmap, RffMap):
        return {
            "kind": "rff",
            "frequencies": _encode_array(fmap.frequencies),
            "sigma": fmap.sigma,
            "seed": fmap.seed,
        }
    if isinstance(fmap, ProductRffMap):
        return {
            "kind": "product_rff",
            "inner": _encode_feature_map(fmap.inner),
            "outer": _encode_array(fmap.outer),
            "sigma_x": fmap.sigma_x,
            "sigma_p": fmap.sigma_p,
            "seed": fmap.seed,
        }
    if isinstance(fmap, NystromMap):
        return {
            "kind": "nystrom",
            "landmark_x": _encode_array(fmap.landmark_x),
            "landmark_bag_idx": _encode_array(fmap.landmark_bag_idx, "i8"),
            "landmark_bags": [_encode_bag(b) for b in fmap.landmark_bags],
            "whitening": _encode_array(fmap.whitening),
            "spec": fmap.spec.to_dict(),
            "seed": fmap.seed,
            "eig_threshold": fmap.eig_threshold,
        }
    raise ModelSchemaError(f"unknown feature map type {type(fmap).__name__}")


def _decode_feature_map(obj, what: str = "feature_map"):
    try:
        kind = obj["kind"]
    except (KeyError, TypeError) as exc:
        raise ModelSchemaError(f"{what}: missing kind") from exc
    if kind == "rff":
        return RffMap(
            frequencies=_decode_array(obj["frequencies"], f"{what}.frequencies"),
            sigma=float(obj["sigma"]),
            seed=int(obj["seed"]),
        )
    if kind == "product_rff":
        return ProductRffMap(
            inner=_decode_feature_map(obj["inner"], f"{what}.inner"),
            outer=_decode_array(obj["outer"], f"{what}.outer"),
            sigma_x=float(obj["sigma_x"]),
            sigma_p=float(obj["sigma_p"]),
            seed=int(obj["seed"]),
        )
    if kind == "nystrom":
        return NystromMap(
            landmark_x=_decode_array(obj["landmark_x"], f"{what}.landmark_x"),
            landmark_bag_idx=_decode_array(obj["landmark_bag_idx"], f"{what}.landmark_bag_idx").astype(np.intp),
            landmark_bags=tuple(
                _decode_bag(b, f"{what}.landmark_bags[{i}]")
                for i, b in enumerate(obj["landmark_bags"])
            ),
            whitening=_decode_array(obj["whitening"], f"{what}.whitening"),
            spec=_decode_spec(obj["spec"]),
            seed=int(obj["seed"]),
            eig_threshold=float(obj.get("eig_threshold", 1e-10)),
        )
    raise ModelSchemaError(f"{what}: unknown feature map kind {kind!r}")


def _decode_spec(obj) -> KernelSpec:
    try:
        return KernelSpec.from_dict(dict(obj))
    except (TypeError, ValueError) as exc:
        raise ModelSchemaError(f"bad kernel spec: {exc}") from exc


def _encode_payload(payload) -> dict:
    if isinstance(payload, DualPayload):
        return {
            "kind": "dual",
            "support_x": _encode_array(payload.support_x),
            "support_coef": _encode_array(payload.support_coef),
            "support_bag_idx": _encode_array(payload.support_bag_idx, "i8"),
            "bags": [_encode_bag(b) for b in payload.bags],
        }
    return {
        "kind": "linear",
        "weights": _encode_array(payload.weights),
        "feature_map": _encode_feature_map(payload.feature_map),
    }


def _decode_payload(obj):
    try:
        kind = obj["kind"]
    except (KeyError, TypeError) as exc:
        raise ModelSchemaError("payload: missing kind") from exc
    if kind == "dual":
        try:
            return DualPayload(
                support_x=_decode_array(obj["support_x"], "payload.support_x"),
                support_coef=_decode_array(obj["support_coef"], "payload.support_coef"),
                support_bag_idx=_decode_array(obj["support_bag_idx"], "payload.support_bag_idx").astype(np.intp),
                bags=tuple(_decode_bag(b, f"payload.bags[{i}]") for i, b in enumerate(obj["bags"])),
            )
        except KeyError as exc:
            raise ModelSchemaError(f"payload: missing field {exc}") from exc
    if kind == "linear":
        try:
            return LinearPayload(
                weights=_decode_array(obj["weights"], "payload.weights"),
                feature_map=_decode_feature_map(obj["feature_map"]),
            )
        except KeyError as exc:
            raise ModelSchemaError(f"payload: missing field {exc}") from exc
    raise ModelSchemaError(f"payload: unknown kind {kind!r}")


def save_model(model: Model, path):
    """Write the model as a deterministic single-line JSON envelope."""
    envelope = {
        "format_version": FORMAT_VERSION,
        "method": model.method,
        "spec": model.spec.to_dict(),
        "lambda": model.lam,
        "loss": {"kind": model.loss_kind, "eps": model.eps},
        "payload": _encode_payload(model.payload),
        "seeds": {
            "master": model.metadata.get("seed"),
            "feature": model.metadata.get("feature_seed"),
        },
        "metadata": {
            k: v for k, v in model.metadata.items() if k not in ("seed", "feature_seed")
        },
    }
    text = json.dumps(envelope, sort_keys=True, separators=(",", ":"))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
        fh.write("\n")


def load_model(path) -> Model:
    """Read a model envelope, validating version and schema."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelCorruptError(f"not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ModelSchemaError("envelope must be a JSON object")
    if "format_version" not in obj:
        raise ModelSchemaError("missing format_version")
    if obj["format_version"] != FORMAT_VERSION:
        raise ModelVersionError(
            f"unsupported format_version {obj['format_version']!r} (supported: {FORMAT_VERSION})"
        )
    for key in ("method", "spec", "lambda", "loss", "payload", "seeds"):
        if key not in obj:
            raise ModelSchemaError(f"missing top-level field {key!r}")
    loss = obj["loss"]
    if not (isinstance(loss, dict) and "kind" in loss):
        raise ModelSchemaError("loss must be an object with a 'kind'")
    metadata = dict(obj.get("metadata", {}))
    seeds = obj["seeds"]
    if isinstance(seeds, dict):
        if seeds.get("master") is not None:
            metadata["seed"] = seeds["master"]
        if seeds.get("feature") is not None:
            metadata["feature_seed"] = seeds["feature"]
    try:
        lam = float(obj["lambda"])
    except (TypeError, ValueError) as exc:
        raise ModelSchemaError(f"bad lambda: {obj['lambda']!r}") from exc
    return Model(
        method=str(obj["method"]),
        spec=_decode_spec(obj["spec"]),
        lam=lam,
        loss_kind=str(loss["kind"]),
        eps=float(loss.get("eps", 0.1)),
        payload=_decode_payload(obj["payload"]),
        metadata=metadata,
    )
