#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Independent reader for hopscotch checkpoint files.

Checks the header, manifest and tensor table against the byte layout and
prints a one-line summary. Exit status 1 on any inconsistency.

    check_checkpoint.py FILE [FILE...]
"""

import json
import struct
import sys

MAGIC = b"HOPSCOT1"


def expected_shapes(cfg, removed):
    d, ff, v, t = cfg["d_model"], cfg["d_ff"], cfg["vocab_size"], cfg["max_seq_len"]
    shapes = {"tok_emb": [v, d], "pos_emb": [t, d], "final_norm": [d], "head": [d, v]}
    for i in range(cfg["n_layers"]):
        p = f"layers.{i}."
        if i not in removed:
            shapes[p + "attn.norm"] = [d]
            for m in ("wq", "wk", "wv", "wo"):
                shapes[p + "attn." + m] = [d, d]
        shapes[p + "mlp.norm"] = [d]
        shapes[p + "mlp.up"] = [d, ff]
        shapes[p + "mlp.down"] = [ff, d]
    return shapes


def check(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise ValueError("bad magic")
    (mlen,) = struct.unpack_from("<Q", data, 8)
    if mlen % 8:
        raise ValueError(f"manifest length {mlen} is not a multiple of 8")
    manifest = json.loads(data[16 : 16 + mlen].decode("utf-8"))
    if manifest["format_version"] != 1:
        raise ValueError("unknown format version")
    cfg = manifest["config"]
    removed = set(manifest["mask"])
    payload = 16 + mlen
    want = expected_shapes(cfg, removed)
    seen = set()
    end = 0
    for i, t in enumerate(manifest["tensors"]):
        name = t["name"]
        if name not in want:
            raise ValueError(f"unexpected tensor {name}")
        if name in seen:
            raise ValueError(f"duplicate tensor {name}")
        seen.add(name)
        if t["shape"] != want[name]:
            raise ValueError(f"{name}: shape {t['shape']} != {want[name]}")
        if t["dtype"] != "f32":
            raise ValueError(f"{name}: dtype {t['dtype']}")
        count = 1
        for s in t["shape"]:
            count *= s
        off, length = t["byte_offset"], t["byte_length"]
        if length != 4 * count:
            raise ValueError(f"{name}: byte_length {length} != {4 * count}")
        if off % 8:
            raise ValueError(f"{name}: offset {off} not 8-aligned")
        if off < end:
            raise ValueError(f"{name}: overlaps the previous tensor")
        end = off + length
        # Every value must decode as a finite float.
        for (x,) in struct.iter_unpack("<f", data[payload + off : payload + end]):
            if x != x or x in (float("inf"), float("-inf")):
                raise ValueError(f"{name}: non-finite value")
    if seen != set(want):
        raise ValueError(f"missing tensors: {sorted(set(want) - seen)}")
    if payload + end > len(data) or len(data) - (payload + end) >= 8:
        raise ValueError(f"payload ends at {payload + end}, file is {len(data)} bytes")
    for key in ("attn_gate", "attn_residual", "mlp_gate", "mlp_residual"):
        vals = [float(x) for x in manifest["scales"][key]]
        if len(vals) != cfg["n_layers"]:
            raise ValueError(f"scales.{key} has {len(vals)} entries")
        for layer in removed:
            if key == "attn_gate" and vals[layer] != 0.0:
                raise ValueError(f"removed layer {layer} has a nonzero gate")
    return f"{path}: ok, {len(seen)} tensors, {len(data)} bytes, removed {sorted(removed)}"


def main(argv):
    if len(argv) < 2:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    status = 0
    for path in argv[1:]:
        try:
            print(check(path))
        except (ValueError, KeyError, json.JSONDecodeError, struct.error) as e:
            print(f"{path}: {e}", file=sys.stderr)
            status = 1
    return status


if __name__ == "__main__":
    sys.exit(main(sys.argv))
