"""Named, platform-stable derivation of RNG sub-seeds from one master seed.

Every source of randomness in the package draws from a 64-bit seed derived
here, so that one command-line ``--seed`` reproduces an entire run while the
individual components (initialization, shuffling, samplers, synthesis) remain
independently reproducible.
"""

from __future__ import annotations

import hashlib


def derive_seed(master: int, *labels: object) -> int:
    """Derive a 64-bit sub-seed from ``master`` and a label path.

    The derivation is a SHA-256 hash of the decimal master seed and the
    ``repr`` of each label, so it is stable across platforms and Python
    versions. Distinct label paths give independent streams for all
    practical purposes.
    """
    h = hashlib.sha256()
    h.update(str(int(master)).encode())
    for label in labels:
        h.update(b"/")
        h.update(repr(label).encode())
    return int.from_bytes(h.digest()[:8], "little")
