"""JSON documents for chains and distributions.

Chain document::

    {"type": "general", "N": 3,
     "rows": [{"from": 1, "to": [0, 2], "p": [0.4, 0.6]}, ...],
     "order": "total" | {"pairs": [[1, 2], ...]},
     "minimal": 1}

States are the integers ``1..N``; target ``0`` is absorption.  Optional keys
``truncation`` and ``overflow_states`` record how a larger chain was cut.

Distribution document: ``{"weights": {"1": 0.2, "2": 0.8}}``.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Union

import numpy as np

from .chain import TRUNCATION_MODES, AbsorbedKernel, Distribution, StateSpace
from .errors import ChainFormatError, InvalidOrder

PathLike = Union[str, Path]


def _load(src) -> dict:
    if isinstance(src, dict):
        return src
    try:
        if isinstance(src, Path) or (isinstance(src, str) and not src.lstrip().startswith("{")):
            text = Path(src).read_text()
        else:
            text = src
        doc = json.loads(text)
    except (OSError, json.JSONDecodeError) as e:
        raise ChainFormatError(f"cannot read JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ChainFormatError("top-level JSON value must be an object")
    return doc


def _int(v, what) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ChainFormatError(f"{what} must be an integer, got {v!r}")
    return int(v)


def kernel_from_json(src) -> AbsorbedKernel:
    """Parse a chain document (dict, JSON text or file path)."""
    doc = _load(src)
    if doc.get("type", "general") != "general":
        raise ChainFormatError(f"unsupported chain type {doc.get('type')!r}")
    if "N" not in doc or "rows" not in doc:
        raise ChainFormatError("chain document needs 'N' and 'rows'")
    N = _int(doc["N"], "N")
    if N < 1:
        raise ChainFormatError("N must be >= 1")
    states = list(range(1, N + 1))
    order = doc.get("order", "total")
    minimal = _int(doc.get("minimal", 1), "minimal")
    try:
        if order == "total":
            if minimal != 1:
                raise ChainFormatError("a total order has minimal state 1")
            space = StateSpace(states)
        elif isinstance(order, dict) and isinstance(order.get("pairs"), list):
            pairs = []
            for pr in order["pairs"]:
                if not (isinstance(pr, list) and len(pr) == 2):
                    raise ChainFormatError(f"order pair {pr!r} is not a 2-element list")
                pairs.append((_int(pr[0], "order pair entry"), _int(pr[1], "order pair entry")))
            space = StateSpace.from_pairs(states, pairs, minimal=minimal)
        else:
            raise ChainFormatError("'order' must be \"total\" or {\"pairs\": [...]}")
    except InvalidOrder as e:
        raise ChainFormatError(f"invalid order: {e}") from e
    rows: dict = {}
    if not isinstance(doc["rows"], list):
        raise ChainFormatError("'rows' must be a list")
    for row in doc["rows"]:
        if not isinstance(row, dict) or not {"from", "to", "p"} <= row.keys():
            raise ChainFormatError(f"row {row!r} needs 'from', 'to' and 'p'")
        x = _int(row["from"], "row 'from'")
        if not 1 <= x <= N:
            raise ChainFormatError(f"row 'from'={x} outside 1..{N}")
        if x in rows:
            raise ChainFormatError(f"duplicate row for state {x}")
        to, pr = row["to"], row["p"]
        if not (isinstance(to, list) and isinstance(pr, list) and len(to) == len(pr)):
            raise ChainFormatError(f"row {x}: 'to' and 'p' must be lists of equal length")
        entries: dict = {}
        for y, v in zip(to, pr):
            y = _int(y, f"row {x} target")
            if not 0 <= y <= N:
                raise ChainFormatError(f"row {x}: target {y} outside 0..{N}")
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
                raise ChainFormatError(f"row {x}: probability {v!r} is not a number")
            entries[y] = entries.get(y, 0.0) + float(v)
        rows[x] = entries
    missing = [x for x in states if x not in rows]
    if missing:
        raise ChainFormatError(f"no row for state(s) {missing[:5]}")
    trunc = doc.get("truncation")
    if trunc is not None and trunc not in TRUNCATION_MODES:
        raise ChainFormatError(f"unknown truncation {trunc!r}")
    overflow = [_int(v, "overflow state") for v in doc.get("overflow_states", [])]
    return AbsorbedKernel.from_rows(space, rows, truncation_mode=trunc, overflow_states=overflow)


def kernel_to_json(k: AbsorbedKernel) -> dict:
    """Chain document for a kernel on ``{1..N}``."""
    space = k.space
    if space.states != tuple(range(1, len(space) + 1)):
        raise ValueError("chain documents need states labelled 1..N")
    rows = []
    for x in space.states:
        r = k.row(x)
        ys = sorted(r)
        rows.append({"from": x, "to": ys, "p": [r[y] for y in ys]})
    doc = {"type": "general", "N": len(space), "rows": rows, "minimal": space.minimal}
    if space.is_total:
        doc["order"] = "total"
    else:
        leq = space.leq
        doc["order"] = {"pairs": [[space.label(int(i)), space.label(int(j))]
                                  for i, j in np.argwhere(leq) if i != j]}
    if k.truncation_mode is not None:
        doc["truncation"] = k.truncation_mode
        doc["overflow_states"] = list(k.overflow_states)
    return doc


def distribution_from_json(src, space: StateSpace, normalize: bool = False) -> Distribution:
    doc = _load(src)
    w = doc.get("weights")
    if not isinstance(w, dict):
        raise ChainFormatError("distribution document needs a 'weights' object")
    mapping = {}
    for key, v in w.items():
        try:
            x = int(key)
        except ValueError:
            raise ChainFormatError(f"state key {key!r} is not an integer") from None
        if x not in space:
            raise ChainFormatError(f"state {x} is not in the chain")
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ChainFormatError(f"weight of state {x} is not a number")
        mapping[x] = float(v)
    try:
        return Distribution.from_dict(space, mapping, normalize=normalize)
    except ValueError as e:
        raise ChainFormatError(str(e)) from e


def distribution_to_json(nu: Distribution) -> dict:
    return {"weights": {str(x): v for x, v in nu.as_dict().items()}}
