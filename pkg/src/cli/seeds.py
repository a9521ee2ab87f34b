"""
Stable per-run seeds.
"""

import hashlib
import json


def derive_seed(master: int, *parts) -> int:
    """63-bit seed from the master seed and any JSON-serialisable labels."""
    text = json.dumps([int(master)] + [p if isinstance(p, (int, str)) else repr(p) for p in parts])
    digest = hashlib.sha256(text.encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'little') & (2 ** 63 - 1)
