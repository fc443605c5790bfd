"""Deterministic JSON serialisation of reports (schema ``ggreport 1``).

Rationals are written as decimal ``p/q`` strings so no precision is lost;
non-finite floats become the strings ``inf``, ``-inf`` and ``nan``.  Keys
are sorted, so identical inputs give byte-identical documents.
"""

from __future__ import annotations

import json
import math
from fractions import Fraction

SCHEMA = "ggreport 1"


def format_rational(x):
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def to_jsonable(obj):
    """Recursively convert numbers and containers into JSON-safe values."""
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, int):
        return int(obj)
    if isinstance(obj, Fraction):
        return format_rational(obj)
    if hasattr(obj, "as_dict"):
        return to_jsonable(obj.as_dict())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):  # numpy scalars and arrays
        return to_jsonable(obj.tolist())
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    # flint rationals and anything else with an exact string form
    if type(obj).__name__ in ("fmpq", "fmpz"):
        return format_rational(Fraction(str(obj)))
    raise TypeError(f"cannot serialise {type(obj).__name__}")


RESERVED = ("schema", "kind", "passed")


def make_report(kind, payload, passed):
    clash = [k for k in RESERVED if k in payload]
    if clash:
        raise ValueError(f"payload may not set envelope keys {clash}")
    return {"schema": SCHEMA, "kind": kind, "passed": bool(passed), **to_jsonable(payload)}


def dumps(report):
    return json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
