"""Portable on-disk dataset format.

A dataset is a directory holding `manifest.json` and `samples.bin`. The
binary file is a sequence of records:

    [record length: u64 LE]        bytes following this field
    [metadata length: u64 LE][metadata JSON, UTF-8]
    [tensor]*                      one per name, in manifest order

with tensors encoded as [rank: u32][dims: u32 each][f32 LE payload,
row-major]. Tensor order is channels, then extra tensors, then targets,
exactly as named in the manifest.
"""

from __future__ import annotations

import io
import json
import os

from .binio import (FormatError, canonical_json_bytes, read_tensor,
                    read_u64, tensor_bytes, write_u64)
from .sampling import TrainingSample

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
SAMPLES_NAME = "samples.bin"


def _encode_record(sample: TrainingSample, manifest: dict) -> bytes:
    meta = dict(sample.metadata)
    meta["extents"] = list(sample.extents)
    meta_bytes = canonical_json_bytes(meta)
    body = io.BytesIO()
    write_u64(body, len(meta_bytes))
    body.write(meta_bytes)
    for group, names in (("channels", manifest["channel_names"]),
                         ("extras", manifest["extra_tensor_names"]),
                         ("targets", manifest["head_names"])):
        maps = getattr(sample, group)
        if sorted(maps) != sorted(names):
            raise ValueError(
                f"sample {group} {sorted(maps)} do not match manifest "
                f"{sorted(names)}")
        for name in names:
            body.write(tensor_bytes(maps[name]))
    return body.getvalue()


def _decode_record(payload: bytes, manifest: dict) -> TrainingSample:
    buf = memoryview(payload)
    if len(buf) < 8:
        raise FormatError("truncated record header")
    meta_len = int.from_bytes(buf[:8], "little")
    if 8 + meta_len > len(buf):
        raise FormatError("truncated record metadata")
    meta = json.loads(bytes(buf[8:8 + meta_len]).decode("utf-8"))
    offset = 8 + meta_len
    groups = {}
    for key, names in (("channels", manifest["channel_names"]),
                       ("extras", manifest["extra_tensor_names"]),
                       ("targets", manifest["head_names"])):
        maps = {}
        for name in names:
            arr, offset = read_tensor(buf, offset)
            maps[name] = arr
        groups[key] = maps
    if offset != len(buf):
        raise FormatError("record has trailing bytes")
    extents = tuple(meta["extents"])
    return TrainingSample(extents=extents, channels=groups["channels"],
                          targets=groups["targets"], extras=groups["extras"],
                          metadata=meta)


class DatasetWriter:
    """Streams records to disk in index order; finalize() seals the manifest."""

    def __init__(self, out_dir: str, manifest: dict):
        manifest = dict(manifest)
        manifest["format_version"] = FORMAT_VERSION
        manifest.setdefault("extra_tensor_names", [])
        for key in ("task", "channel_names", "head_names", "seed"):
            if key not in manifest:
                raise ValueError(f"manifest missing required key {key!r}")
        os.makedirs(out_dir, exist_ok=True)
        self.out_dir = out_dir
        self.manifest = manifest
        self._fh = open(os.path.join(out_dir, SAMPLES_NAME), "wb")
        self.count = 0

    def append(self, sample: TrainingSample) -> None:
        record = _encode_record(sample, self.manifest)
        write_u64(self._fh, len(record))
        self._fh.write(record)
        self.count += 1

    def finalize(self) -> None:
        self._fh.close()
        self.manifest["count"] = self.count
        path = os.path.join(self.out_dir, MANIFEST_NAME)
        with open(path, "wb") as fh:
            fh.write(canonical_json_bytes(self.manifest))

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.finalize()
        else:
            self._fh.close()
        return False


class Dataset:
    """Random-access reader over a dataset directory."""

    def __init__(self, path: str):
        self.path = path
        with open(os.path.join(path, MANIFEST_NAME), "rb") as fh:
            self.manifest = json.loads(fh.read().decode("utf-8"))
        if self.manifest.get("format_version") != FORMAT_VERSION:
            raise FormatError(
                f"unsupported dataset format version "
                f"{self.manifest.get('format_version')!r}")
        self._offsets = []
        samples_path = os.path.join(path, SAMPLES_NAME)
        with open(samples_path, "rb") as fh:
            size = os.fstat(fh.fileno()).st_size
            while fh.tell() < size:
                start = fh.tell()
                length = read_u64(fh)
                if fh.tell() + length > size:
                    raise FormatError("truncated record body")
                self._offsets.append((start + 8, length))
                fh.seek(length, os.SEEK_CUR)
        if len(self._offsets) != self.manifest["count"]:
            raise FormatError(
                f"manifest count {self.manifest['count']} != "
                f"{len(self._offsets)} records on disk")
        self._fh = open(samples_path, "rb")

    def __len__(self) -> int:
        return len(self._offsets)

    def __getitem__(self, index: int) -> TrainingSample:
        offset, length = self._offsets[index]
        self._fh.seek(offset)
        return _decode_record(self._fh.read(length), self.manifest)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def close(self):
        self._fh.close()


def load_dataset(path: str) -> Dataset:
    return Dataset(path)
