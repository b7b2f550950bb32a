import json
import math
from typing import Any, Optional

import numpy as np
from yarl import URL


def derive_seed(base_seed: int, index: int) -> np.random.SeedSequence:
    """Counter-based seed for stream ``index`` under ``base_seed``.

    The result depends on nothing but the two integers, so streams can be
    created in any order, on any thread.
    """
    return np.random.SeedSequence(base_seed, spawn_key=(index,))


def mask_url_pwd(route: Optional[str]) -> Optional[str]:
    """Hide the password of a collector address before it is logged."""
    if route is None:
        return None
    url = URL(route)
    if not url.password:
        return route
    return str(url.with_password('******'))


def _finite(obj: Any) -> Any:
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _json_encoder(obj):
    if isinstance(obj, URL):
        return str(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return _finite(float(obj))
    if isinstance(obj, np.ndarray):
        return _finite(obj.tolist())
    if isinstance(obj, bytes):
        try:
            return obj.decode('UTF8')
        except Exception:
            return str(obj)
    return repr(obj)


def json_encode(data) -> str:
    """One JSON document on one line; non-finite floats become strings."""
    return json.dumps(_finite(data), default=_json_encoder,
                      allow_nan=False)
