"""Labeled seed derivation.

A single base seed fans out into independent component seeds by hashing the
base together with a label path, e.g. ``derive_seed(7, "subset", 3)``.
"""

import hashlib


def derive_seed(base: int, *labels) -> int:
    """Derive a 63-bit seed from ``base`` and a sequence of labels."""
    text = "/".join([str(int(base))] + [str(label) for label in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def component_seeds(base: int) -> dict:
    """Seeds for every randomized component of one experiment run."""
    names = ("blobs", "noise", "split", "init", "shuffle", "sampling", "random", "partition", "repeat")
    return {name: derive_seed(base, name) for name in names}
