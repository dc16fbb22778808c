"""Versioned binary model files and optimizer sidecars.

Layout: [u64 header length][canonical JSON header][payloads], with one
length-prefixed little-endian float32 payload per named parameter, in the
exact order declared by the header. Round trips are bit exact.
"""

from __future__ import annotations

import json

from ..binio import (FormatError, canonical_json_bytes, read_raw_f32,
                     read_u64, write_raw_f32, write_u64)
from .network import NetworkSpec, ParameterStore

MODEL_FORMAT_VERSION = 1


def _write_container(path: str, header: dict, arrays: dict) -> None:
    blob = canonical_json_bytes(header)
    with open(path, "wb") as fh:
        write_u64(fh, len(blob))
        fh.write(blob)
        for name in header["param_names"]:
            write_raw_f32(fh, arrays[name])


def _read_container(path: str) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        header_len = read_u64(fh)
        raw = fh.read(header_len)
        if len(raw) != header_len:
            raise FormatError("truncated header")
        header = json.loads(raw.decode("utf-8"))
        if header.get("format_version") != MODEL_FORMAT_VERSION:
            raise FormatError(f"unsupported model format version "
                              f"{header.get('format_version')!r}")
        arrays = {}
        for name in header["param_names"]:
            arrays[name] = read_raw_f32(fh, header["param_shapes"][name])
        if fh.read(1):
            raise FormatError("trailing bytes after declared payloads")
    return header, arrays


def save_model(spec: NetworkSpec, store: ParameterStore, path: str,
               extra: dict | None = None) -> None:
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "model",
        "spec": spec.to_dict(),
        "channel_names": list(spec.input_channel_names),
        "head_names": list(spec.head_names),
        "param_names": store.names(),
        "param_shapes": {n: list(store.values[n].shape)
                         for n in store.names()},
        "param_trainable": {n: store.is_trainable(n) for n in store.names()},
        "init": "kaiming_normal_fan_in",
        "dtype": "float32-le",
        "extra": extra or {},
    }
    _write_container(path, header, store.values)


def load_model(path: str) -> tuple[NetworkSpec, ParameterStore, dict]:
    header, arrays = _read_container(path)
    if header.get("kind") != "model":
        raise FormatError(f"not a model file (kind {header.get('kind')!r})")
    spec = NetworkSpec.from_dict(header["spec"])
    store = ParameterStore()
    for name in header["param_names"]:
        store.add(name, arrays[name], header["param_trainable"][name])
    return spec, store, header.get("extra", {})


def save_optimizer_state(state, store: ParameterStore, path: str,
                         hyper: dict | None = None) -> None:
    names = []
    arrays = {}
    for prefix, buffers in (("m", state.m), ("v", state.v)):
        for name in store.trainable_names():
            key = f"{prefix}:{name}"
            names.append(key)
            arrays[key] = buffers[name]
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "adam_state",
        "step": state.step,
        "hyper": hyper or {},
        "param_names": names,
        "param_shapes": {n: list(arrays[n].shape) for n in names},
    }
    _write_container(path, header, arrays)


def load_optimizer_state(path: str, store: ParameterStore):
    from .optim import AdamState
    header, arrays = _read_container(path)
    if header.get("kind") != "adam_state":
        raise FormatError("not an optimizer-state file")
    state = AdamState(step=header["step"])
    for name in store.trainable_names():
        m_key, v_key = f"m:{name}", f"v:{name}"
        if m_key not in arrays or v_key not in arrays:
            raise FormatError(f"optimizer state missing buffers for {name!r}")
        state.m[name] = arrays[m_key]
        state.v[name] = arrays[v_key]
    return state, header.get("hyper", {})
