"""Navigation helpers for MATLAB v7.3 (HDF5) containers.

MATLAB v7.3 stores struct arrays as groups whose fields are datasets of
object references (one per element); strings are uint16 code-unit arrays;
empty values appear as a 2-element uint64 dataset or carry the
MATLAB_empty attribute. These helpers walk that encoding and yield plain
Python values.
"""

from __future__ import annotations

import numpy as np


class ZucoReadError(Exception):
    pass


def is_reference(ds) -> bool:
    import h5py

    return isinstance(ds, h5py.Dataset) and h5py.check_ref_dtype(ds.dtype) is not None


def is_empty(node) -> bool:
    if node is None:
        return True
    if node.attrs.get("MATLAB_empty", 0):
        return True
    import h5py

    if isinstance(node, h5py.Dataset) and node.dtype == np.uint64 and node.size == 2:
        return np.asarray(node).flatten().tolist() == [0, 0]
    return False


def read_string(node) -> str:
    arr = np.asarray(node).flatten()
    if arr.dtype.kind in ("u", "i"):
        return "".join(chr(int(c)) for c in arr if int(c) != 0)
    if arr.dtype.kind == "S":
        return b"".join(arr.tolist()).decode("utf-8", errors="replace")
    raise ZucoReadError(f"cannot decode string from dtype {arr.dtype}")


def deref(file, ref):
    try:
        return file[ref]
    except (KeyError, ValueError) as e:
        raise ZucoReadError(f"dangling object reference: {e}") from e


def iter_refs(file, ds):
    """Yield dereferenced nodes of a reference dataset in storage order."""
    for ref in np.asarray(ds).flatten():
        yield deref(file, ref)


def struct_field(file, struct, name):
    """Field dataset of a struct (group) or None when absent."""
    if name in struct:
        return struct[name]
    return None
