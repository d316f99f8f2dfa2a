"""Versioned msgpack checkpoints for networks and DaDiL dictionaries."""
from os import PathLike
from pathlib import Path
from typing import Any, Union

import msgpack
import numpy as np
import pydantic

from shiftkit.adapters.dadil import Dictionary
from shiftkit.classifiers import FeedForwardNet
from shiftkit.core import EmpiricalDistribution, SimplexWeights
from shiftkit.exceptions import CheckpointError
from shiftkit.schemas import Architecture

NET_FORMAT = "shiftkit.net"
DICTIONARY_FORMAT = "shiftkit.dictionary"
CHECKPOINT_VERSION = 1


def pack_array(values: np.ndarray) -> dict[str, Any]:
    """Little-endian float64 bytes plus shape (exact round-trip)."""
    values = np.ascontiguousarray(values, dtype="<f8")
    return {"shape": list(values.shape), "data": values.tobytes()}


def unpack_array(payload: dict[str, Any]) -> np.ndarray:
    return np.frombuffer(payload["data"], dtype="<f8").reshape(payload["shape"]).copy()


def _unpack(raw: bytes, expected_format: str) -> dict[str, Any]:
    try:
        payload = msgpack.unpackb(raw)
    except (msgpack.UnpackException, ValueError, TypeError) as ex:
        raise CheckpointError("Checkpoint is not a valid msgpack payload.") from ex
    if not isinstance(payload, dict) or payload.get("format") != expected_format:
        raise CheckpointError(f"Checkpoint is not a {expected_format} payload.")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"Expected checkpoint version {CHECKPOINT_VERSION}, "
            f"but got version {payload.get('version')}."
        )
    return payload


def dumps_net(net: FeedForwardNet) -> bytes:
    return msgpack.packb(
        {
            "format": NET_FORMAT,
            "version": CHECKPOINT_VERSION,
            "architecture": net.architecture.json(),
            "params": pack_array(net.params),
        }
    )


def loads_net(raw: bytes) -> FeedForwardNet:
    """Rebuilds a network from `dumps_net` output.

    Raises:
        CheckpointError: If the payload is malformed or has the wrong version.
    """
    payload = _unpack(raw, NET_FORMAT)
    try:
        architecture = Architecture.parse_raw(payload["architecture"])
        return FeedForwardNet(architecture, unpack_array(payload["params"]))
    except (pydantic.ValidationError, KeyError, ValueError) as ex:
        raise CheckpointError("Network checkpoint is corrupt.") from ex


def dumps_dictionary(dictionary: Dictionary) -> bytes:
    return msgpack.packb(
        {
            "format": DICTIONARY_FORMAT,
            "version": CHECKPOINT_VERSION,
            "beta": dictionary.beta,
            "label_cost": dictionary.label_cost.value,
            "atoms": [
                {"support": pack_array(atom.support), "labels": pack_array(atom.labels)}
                for atom in dictionary.atoms
            ],
            "weights": [pack_array(w.values) for w in dictionary.weights],
        }
    )


def loads_dictionary(raw: bytes) -> Dictionary:
    """Rebuilds a dictionary from `dumps_dictionary` output.

    Raises:
        CheckpointError: If the payload is malformed or has the wrong version.
    """
    payload = _unpack(raw, DICTIONARY_FORMAT)
    try:
        return Dictionary(
            atoms=[
                EmpiricalDistribution.uniform(
                    unpack_array(atom["support"]), unpack_array(atom["labels"])
                )
                for atom in payload["atoms"]
            ],
            weights=[SimplexWeights(unpack_array(w)) for w in payload["weights"]],
            beta=payload["beta"],
            label_cost=payload["label_cost"],
        )
    except (KeyError, ValueError) as ex:
        raise CheckpointError("Dictionary checkpoint is corrupt.") from ex


def save_net(net: FeedForwardNet, path: Union[str, PathLike]) -> None:
    Path(path).write_bytes(dumps_net(net))


def load_net(path: Union[str, PathLike]) -> FeedForwardNet:
    return loads_net(Path(path).read_bytes())


def save_dictionary(dictionary: Dictionary, path: Union[str, PathLike]) -> None:
    Path(path).write_bytes(dumps_dictionary(dictionary))


def load_dictionary(path: Union[str, PathLike]) -> Dictionary:
    return loads_dictionary(Path(path).read_bytes())
