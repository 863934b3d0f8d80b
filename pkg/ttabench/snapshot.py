"""Save and restore online states so long streams can resume after an interruption.

A snapshot directory mirrors the bundle layout: ``state.json`` names every array and its dtype and
shape, and each array is a raw little-endian blob (``<f8`` or ``<i8``), so a resumed stream continues
bit-exactly.
"""
import json
import logging
import os
import time

import numpy as np

from .errors import BundleFormatError, ValidationError
from .online import init_state
from .tags import MethodTag

logger = logging.getLogger(__name__)

SNAPSHOT_FORMAT_VERSION = 1
STATE_MANIFEST = "state.json"

_DTYPES = {"f": np.dtype("<f8"), "i": np.dtype("<i8")}


def _blob_name(name, dtype):
    return "{}.{}8".format(name, dtype.kind)


def save_state(state, path):
    start_time = time.perf_counter()
    arrays = state.to_arrays()
    manifest = {
        "format_version": SNAPSHOT_FORMAT_VERSION,
        "method_tag": state.method_tag.value,
        "num_classes": state.num_classes,
        "dim": state.dim,
        "seed": state.seed,
        "step_counter": state.step_counter,
        "rng_state": state.rng.bit_generator.state,
        "meta": state.to_meta(),
        "arrays": {},
    }
    try:
        os.makedirs(path, exist_ok=True)
        for name, array in arrays.items():
            dtype = _DTYPES["i" if np.issubdtype(np.asarray(array).dtype, np.integer) else "f"]
            blob = _blob_name(name, dtype)
            with open(os.path.join(path, blob), "wb") as f:
                f.write(np.ascontiguousarray(array, dtype=dtype).tobytes())
            manifest["arrays"][name] = {"blob": blob, "dtype": dtype.str, "shape": list(np.shape(array))}
        with open(os.path.join(path, STATE_MANIFEST), "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise BundleFormatError("cannot write state snapshot to {}: {}".format(path, e), path=str(path)) from e

    logger.log(
        logging.INFO,
        "Saved {method_tag} state at step {step_counter} to {path} in {save_time}",
        extra={
            "method_tag": state.method_tag.value,
            "step_counter": state.step_counter,
            "path": str(path),
            "save_time": time.perf_counter() - start_time,
        },
    )


def load_state(path, text_bank, cfg):
    """Rebuild the state saved under ``path`` for a run using ``text_bank`` and method config ``cfg``."""
    manifest_path = os.path.join(path, STATE_MANIFEST)
    try:
        with open(manifest_path, encoding="utf-8") as f:
            manifest = json.load(f)
    except OSError as e:
        raise BundleFormatError("cannot read {}: {}".format(manifest_path, e), blob=STATE_MANIFEST) from e
    except ValueError as e:
        raise BundleFormatError("{} is not valid JSON: {}".format(manifest_path, e), blob=STATE_MANIFEST) from e

    if manifest.get("format_version") != SNAPSHOT_FORMAT_VERSION:
        raise BundleFormatError("unknown snapshot format_version {}".format(manifest.get("format_version")))
    text_bank = np.asarray(text_bank, dtype=np.float64)
    if list(text_bank.shape) != [manifest["num_classes"], manifest["dim"]]:
        raise ValidationError(
            "snapshot was taken over a {}x{} bank, got {}".format(
                manifest["num_classes"], manifest["dim"], text_bank.shape
            )
        )

    arrays = {}
    for name, entry in manifest["arrays"].items():
        dtype = np.dtype(entry["dtype"])
        blob_path = os.path.join(path, entry["blob"])
        expected = int(np.prod(entry["shape"])) * dtype.itemsize
        if not os.path.exists(blob_path) or os.path.getsize(blob_path) != expected:
            raise BundleFormatError("missing or truncated snapshot blob {}".format(entry["blob"]), blob=entry["blob"])
        with open(blob_path, "rb") as f:
            arrays[name] = np.frombuffer(f.read(), dtype=dtype).reshape(entry["shape"])

    state = init_state(MethodTag(manifest["method_tag"]), text_bank, cfg, seed=manifest["seed"])
    state.restore(manifest["meta"], arrays)
    state.step_counter = manifest["step_counter"]
    state.rng.bit_generator.state = manifest["rng_state"]
    return state
