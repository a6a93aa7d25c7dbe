"""Writers for the downstream tool's wire formats.

These are independent implementations of the documented layouts, so this
package talks to the classifier purely through files.

DEB1 bundle (little-endian):
    magic "DEB1", version u16,
    u32 x6: n_samples, n_img_tokens, d_img, n_txt_tokens, d_txt, n_tasks,
    per task: name length u16 + UTF-8 name + n_classes u32,
    image f32 [n, T_i, d_img], text f32 [n, T_t, d_txt], labels i32 [n, n_tasks]
    (-1 marks a missing label).

DPT1 prototype file (little-endian):
    magic "DPT1", version u16, record count u32 (always 1 here),
    record: name length u16 + UTF-8 name + dtype tag u8 (0=f64, 1=f32) +
    rank u8 + u64 per dimension + raw row-major values.
"""

from __future__ import annotations

import struct

import numpy as np

BUNDLE_MAGIC = b"DEB1"
PROTOTYPE_MAGIC = b"DPT1"
FORMAT_VERSION = 1


def write_bundle(path, images: np.ndarray, texts: np.ndarray, labels: np.ndarray, tasks) -> None:
    """Write a DEB1 file; `tasks` is a list of (name, n_classes)."""
    images = np.ascontiguousarray(images, dtype="<f4")
    texts = np.ascontiguousarray(texts, dtype="<f4")
    labels = np.ascontiguousarray(labels, dtype="<i4")
    n, t_i, d_i = images.shape
    _, t_t, d_t = texts.shape
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<6I", n, t_i, d_i, t_t, d_t, len(tasks)))
        for name, n_classes in tasks:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", n_classes))
        fh.write(images.tobytes())
        fh.write(texts.tobytes())
        fh.write(labels.tobytes())


def write_prototypes(path, prototypes: np.ndarray) -> None:
    """Write one named f64 tensor record under the DPT1 header."""
    arr = np.ascontiguousarray(prototypes, dtype="<f8")
    name = b"prototypes"
    with open(path, "wb") as fh:
        fh.write(PROTOTYPE_MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<I", 1))
        fh.write(struct.pack("<H", len(name)))
        fh.write(name)
        fh.write(bytes([0, arr.ndim]))
        for dim in arr.shape:
            fh.write(struct.pack("<Q", dim))
        fh.write(arr.tobytes())
