"""Tensor file format and checkpoint manifests.

A tensor file starts with one ASCII header line

    D2A1 f32 <ndim> <dim0> <dim1> ...\n

followed by the row-major values as little-endian IEEE-754 32-bit floats.
Storage is 32-bit; values are widened to float64 on load, so round trips
are bit-exact for anything representable in 32 bits.

A checkpoint is a directory of tensor files plus ``manifest.txt`` mapping
parameter names to file names, one ``name=file`` entry per line.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigurationError

MAGIC = "D2A1"


def write_tensor(path: str | os.PathLike, array: np.ndarray) -> None:
    arr = np.asarray(array, dtype=np.float64)
    dims = " ".join(str(d) for d in arr.shape)
    header = f"{MAGIC} f32 {arr.ndim}{' ' + dims if dims else ''}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        header = bytearray()
        while True:
            ch = fh.read(1)
            if not ch:
                raise ConfigurationError(f"{path}: truncated header")
            if ch == b"\n":
                break
            header.extend(ch)
            if len(header) > 4096:
                raise ConfigurationError(f"{path}: header line too long")
        fields = header.decode("ascii", errors="replace").split()
        if len(fields) < 3 or fields[0] != MAGIC or fields[1] != "f32":
            raise ConfigurationError(f"{path}: not a {MAGIC} tensor file")
        try:
            ndim = int(fields[2])
            shape = tuple(int(v) for v in fields[3:])
        except ValueError as err:
            raise ConfigurationError(f"{path}: bad header fields") from err
        if len(shape) != ndim or any(d <= 0 for d in shape):
            raise ConfigurationError(f"{path}: header dims {shape} vs ndim {ndim}")
        count = int(np.prod(shape)) if shape else 1
        raw = fh.read(4 * count)
        if len(raw) != 4 * count:
            raise ConfigurationError(f"{path}: expected {count} values")
        if fh.read(1):
            raise ConfigurationError(f"{path}: trailing bytes after payload")
    values = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    return values.reshape(shape)


def write_manifest(directory: str | os.PathLike,
                   tensors: dict[str, np.ndarray]) -> None:
    """Write every tensor plus a manifest listing name -> file mappings."""
    os.makedirs(directory, exist_ok=True)
    lines = []
    for name, arr in tensors.items():
        fname = name.replace("/", "_").replace("=", "_") + ".d2a1"
        write_tensor(os.path.join(directory, fname), arr)
        lines.append(f"{name}={fname}\n")
    with open(os.path.join(directory, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def read_manifest(directory: str | os.PathLike) -> dict[str, np.ndarray]:
    manifest = os.path.join(directory, "manifest.txt")
    if not os.path.exists(manifest):
        raise ConfigurationError(f"no manifest.txt in {directory}")
    tensors: dict[str, np.ndarray] = {}
    with open(manifest, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{manifest}:{lineno}: expected name=file")
            name, fname = line.split("=", 1)
            tensors[name] = read_tensor(os.path.join(directory, fname))
    return tensors
