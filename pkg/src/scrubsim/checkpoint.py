"""Binary weight checkpoints shared by the fusion encoder and the policy.

Layout (all integers little-endian):
    magic    8 bytes  b"SCRBCKP1"
    version  u32
    count    u32                    number of named tensors
    then per tensor, sorted by name:
      name_len u16, name utf-8
      ndim     u16, dims u32 each
      payload  float32 little-endian, C order
"""

import struct

import numpy as np

MAGIC = b"SCRBCKP1"
VERSION = 1


class CheckpointError(Exception):
    pass


def dumps(tensors):
    """Serialize a {name: array} mapping; values stored as float32."""
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        # note: ascontiguousarray would promote 0-d arrays to 1-d
        arr = np.asarray(tensors[name], dtype="<f4", order="C")
        enc = name.encode("utf-8")
        out.append(struct.pack("<H", len(enc)))
        out.append(enc)
        out.append(struct.pack("<H", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def loads(blob):
    if blob[:8] != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 16
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off); off += 2
        name = blob[off:off + nlen].decode("utf-8"); off += nlen
        (ndim,) = struct.unpack_from("<H", blob, off); off += 2
        shape = struct.unpack_from(f"<{ndim}I", blob, off); off += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=off)
        off += 4 * size
        tensors[name] = arr.reshape(shape).astype(np.float64)
    if off != len(blob):
        raise CheckpointError("trailing bytes after last tensor")
    return tensors


def save(tensors, path):
    blob = dumps(tensors)
    import os
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())


# ---------------------------------------------------------------------------
# policy bundles: base weights + adapter matrices + fusion parameters

def pack_bundle(model, adapters, fusion_params):
    tensors = {}
    for k, v in model.params.items():
        tensors[f"policy/{k}"] = v
    for k, v in adapters.down.items():
        if adapters.ranks.get(k, 0) > 0:
            tensors[f"adapter/{k}_down"] = v
            tensors[f"adapter/{k}_up"] = adapters.up[k]
    tensors["adapter/alpha"] = np.array([adapters.alpha])
    for k, v in fusion_params.items():
        tensors[f"fusion/{k}"] = v
    return tensors


def unpack_bundle(tensors, model, adapters, fusion_params):
    """Load a bundle in place; shapes must match the provided structures."""
    for k in model.params:
        model.params[k] = tensors[f"policy/{k}"]
    for k in adapters.down:
        if adapters.ranks.get(k, 0) > 0:
            adapters.down[k] = tensors[f"adapter/{k}_down"]
            adapters.up[k] = tensors[f"adapter/{k}_up"]
    for k in fusion_params:
        fusion_params[k] = tensors[f"fusion/{k}"]
    return model, adapters, fusion_params
