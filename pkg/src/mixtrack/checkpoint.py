"""Checkpoints: a text manifest plus one binary tensor container per entry."""

from __future__ import annotations

import os

from .tensor import UsageError, load_tensor, save_tensor

MANIFEST = "manifest.txt"


def save_checkpoint(directory, named_states) -> None:
    """Write ``name -> tensor`` pairs; order in the manifest is the order
    given, so identical models always serialize identically."""
    os.makedirs(directory, exist_ok=True)
    lines = []
    for i, (name, t) in enumerate(named_states):
        fname = f"t{i:05d}.mxt"
        save_tensor(os.path.join(directory, fname), t)
        dims = " ".join(str(d) for d in t.data.shape)
        lines.append(f"{fname}\t{name}\t{dims}".rstrip())
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(directory) -> dict:
    """Read a checkpoint back as ``{name: ndarray}``."""
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise UsageError(f"no checkpoint manifest in {directory}")
    arrays = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            fname, name = parts[0], parts[1]
            arr = load_tensor(os.path.join(directory, fname))
            dims = tuple(int(d) for d in parts[2].split()) if len(parts) > 2 and parts[2] else ()
            if arr.shape != dims:
                raise UsageError(f"{name}: payload shape {arr.shape} != manifest {dims}")
            arrays[name] = arr
    return arrays
