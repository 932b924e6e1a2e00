import hashlib
import json


def canonical_dumps(payload: object) -> str:
    """Key-sorted, compact JSON; the basis of every fingerprint."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)


def stable_hash(payload: object, *, length: int = 12) -> str:
    digest = hashlib.sha256(canonical_dumps(payload).encode("utf-8")).hexdigest()
    return digest[:length]
