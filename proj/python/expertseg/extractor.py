"""File-side helpers for feature extractors.

Encoders live outside this package. These functions take the arrays an encoder
produced and write them in the engine's container and manifest formats, using
only numpy, so any exporter can target the engine without linking it.
"""

import json
import os
import struct

import numpy as np

from ._core import templates as _templates

MAGIC = b"OVST"
VERSION = 1
DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("u1"): 2,
    np.dtype("<u2"): 3,
    np.dtype("<i8"): 4,
}
_CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}

#: Text-bank row norms outside this range usually mean a dtype or transpose bug.
NORM_RANGE = (0.1, 100.0)


def write_ovst(path, array):
    """Write one tensor; the dtype must be one of f32, f64, u8, u16, i64."""
    a = np.asarray(array)
    dt = a.dtype.newbyteorder("<") if a.dtype.byteorder not in ("|", "<", "=") else a.dtype
    dt = np.dtype(dt.str.replace("=", "<"))
    if dt not in DTYPE_CODES:
        raise ValueError(f"unsupported dtype {a.dtype}")
    if a.ndim < 1 or a.ndim > 255 or 0 in a.shape:
        raise ValueError("tensor rank must be 1..255 with non-zero dims")
    header = MAGIC + struct.pack("<IBBH", VERSION, DTYPE_CODES[dt], a.ndim, 0)
    header += struct.pack(f"<{a.ndim}Q", *a.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(a, dtype=dt).tobytes())


def read_ovst(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise ValueError("bad magic")
    version, code, rank, reserved = struct.unpack_from("<IBBH", data, 4)
    if version != VERSION or reserved != 0 or code not in _CODE_DTYPES:
        raise ValueError("unsupported header")
    dims = struct.unpack_from(f"<{rank}Q", data, 12)
    dt = _CODE_DTYPES[code]
    offset = 12 + 8 * rank
    expected = int(np.prod(dims)) * dt.itemsize
    if len(data) - offset != expected:
        raise ValueError("size mismatch")
    return np.frombuffer(data, dtype=dt, offset=offset).reshape(dims).copy()


def prompts(class_names, template_strings=None):
    """Template-major prompt grid: result[m][k] is template m filled with class k."""
    template_strings = list(template_strings or _templates())
    return [[t.replace("{}", name, 1) for name in class_names] for t in template_strings]


def export_text_bank(encode, class_names, path, template_strings=None):
    """Encode every prompt with `encode(list_of_str) -> (n, D) array` and write an (M, K, D) f32 bank."""
    grid = prompts(class_names, template_strings)
    m, k = len(grid), len(class_names)
    flat = np.asarray(encode([p for row in grid for p in row]), dtype=np.float32)
    if flat.ndim != 2 or flat.shape[0] != m * k:
        raise ValueError(f"encoder returned shape {flat.shape}, expected ({m * k}, D)")
    norms = np.linalg.norm(flat, axis=1)
    if norms.min() < NORM_RANGE[0] or norms.max() > NORM_RANGE[1]:
        raise ValueError(f"text embedding norms {norms.min():.3g}..{norms.max():.3g} outside {NORM_RANGE}")
    bank = flat.reshape(m, k, -1)
    write_ovst(path, bank)
    return bank.shape


def export_dataset(out_dir, name, class_names, text_bank, items, template_strings=None,
                   ignore_index=255, method="", limit=None):
    """Write features/labels for `items` and a manifest next to them.

    items yields (id, features HxWxD, labels HlxWl or None). Returns the manifest path.
    """
    os.makedirs(os.path.join(out_dir, "features"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "labels"), exist_ok=True)
    entries = []
    dim = None
    for i, (item_id, feats, labels) in enumerate(items):
        if limit is not None and i >= limit:
            break
        feats = np.asarray(feats, dtype=np.float32)
        if feats.ndim != 3:
            raise ValueError(f"{item_id}: features must be H x W x D")
        if dim is not None and feats.shape[2] != dim:
            raise ValueError(f"{item_id}: inconsistent feature dim {feats.shape[2]} != {dim}")
        dim = feats.shape[2]
        entry = {"id": item_id,
                 "feature_path": f"features/{item_id}.ovst",
                 "feature_grid": list(feats.shape[:2])}
        write_ovst(os.path.join(out_dir, entry["feature_path"]), feats)
        if labels is not None:
            labels = np.asarray(labels, dtype=np.uint16)
            entry["label_path"] = f"labels/{item_id}.ovst"
            entry["label_size"] = list(labels.shape)
            write_ovst(os.path.join(out_dir, entry["label_path"]), labels)
        else:
            entry["label_size"] = list(feats.shape[:2])
        entries.append(entry)
    manifest = {"name": name,
                "method": method,
                "class_names": list(class_names),
                "template_strings": list(template_strings or _templates()),
                "ignore_index": ignore_index,
                "text_bank": os.path.relpath(text_bank, out_dir),
                "items": entries}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
    return path
