import hashlib
import json
from datetime import datetime
from typing import Any


def now():
    now_str = datetime.now().isoformat()
    return now_str.replace(':', '-')


def canonical_json(obj: Any, indent: int = None) -> str:
    """Serializes to json with sorted keys so that equal objects give equal strings."""
    return json.dumps(obj, sort_keys=True, indent=indent)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
