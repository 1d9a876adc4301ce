"""Canonical JSON encoding, decoding and hashing.

Every hashed or signed object goes through :func:`canonical_serialize`:
UTF-8 JSON, keys sorted, no whitespace, integers only. Sets are emitted as
sorted lists and dataclasses as objects keyed by field name, so two equal
values always produce the same bytes.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import types
import typing
from typing import Any, Union

HASH_NAME = "sha256"
DIGEST_OF_EMPTY = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


class CanonicalError(ValueError):
    """Raised for values that have no canonical encoding."""


def digest(data: bytes) -> str:
    """SHA-256 of ``data`` as lowercase hex."""
    return hashlib.sha256(data).hexdigest()


def encode(value: Any) -> Any:
    """Lower a domain value to plain JSON types."""
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        raise CanonicalError("floats have no canonical encoding; use integers")
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: encode(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            if isinstance(k, enum.Enum):
                k = k.value
            if not isinstance(k, str):
                raise CanonicalError(f"map keys must be strings, got {type(k).__name__}")
            out[k] = encode(v)
        return out
    if isinstance(value, (set, frozenset)):
        items = [encode(v) for v in value]
        return sorted(items, key=_sort_key)
    if isinstance(value, (list, tuple)):
        return [encode(v) for v in value]
    raise CanonicalError(f"unsupported value kind: {type(value).__name__}")


def _sort_key(item: Any) -> str:
    return json.dumps(item, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def dumps(value: Any) -> str:
    return json.dumps(
        encode(value), sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    )


def canonical_serialize(value: Any) -> bytes:
    return dumps(value).encode("utf-8")


def canonical_digest(value: Any) -> str:
    return digest(canonical_serialize(value))


# -- decoding -----------------------------------------------------------------

_hints_cache: dict[type, dict[str, Any]] = {}


def _hints(cls: type) -> dict[str, Any]:
    hints = _hints_cache.get(cls)
    if hints is None:
        hints = typing.get_type_hints(cls)
        _hints_cache[cls] = hints
    return hints


def decode(tp: Any, data: Any) -> Any:
    """Rebuild a value of type ``tp`` from its :func:`encode` form."""
    if tp is Any:
        return data
    origin = typing.get_origin(tp)
    if origin is Union or origin is types.UnionType:
        args = typing.get_args(tp)
        if data is None and type(None) in args:
            return None
        non_none = [a for a in args if a is not type(None)]
        if len(non_none) == 1:
            return decode(non_none[0], data)
        raise CanonicalError(f"ambiguous union {tp}")
    if origin in (tuple,):
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(decode(args[0], v) for v in data)
        return tuple(decode(a, v) for a, v in zip(args, data))
    if origin in (frozenset, set):
        (arg,) = typing.get_args(tp)
        return frozenset(decode(arg, v) for v in data)
    if origin in (list,):
        (arg,) = typing.get_args(tp)
        return [decode(arg, v) for v in data]
    if origin in (dict,):
        _, val_t = typing.get_args(tp)
        return {k: decode(val_t, v) for k, v in data.items()}
    if isinstance(tp, type):
        if issubclass(tp, enum.Enum):
            return tp(data)
        if dataclasses.is_dataclass(tp):
            if not isinstance(data, dict):
                raise CanonicalError(f"expected object for {tp.__name__}")
            hints = _hints(tp)
            kwargs = {}
            for f in dataclasses.fields(tp):
                if f.name in data:
                    kwargs[f.name] = decode(hints[f.name], data[f.name])
                elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                    raise CanonicalError(f"{tp.__name__}: missing field {f.name!r}")
            return tp(**kwargs)
        if tp in (str, int, bool):
            if tp is int and isinstance(data, bool):
                raise CanonicalError("expected int, got bool")
            if not isinstance(data, tp):
                raise CanonicalError(f"expected {tp.__name__}, got {type(data).__name__}")
            return data
    if tp is dict:
        return dict(data)
    raise CanonicalError(f"cannot decode type {tp!r}")


def parse(tp: Any, raw: bytes | str) -> Any:
    """Inverse of :func:`canonical_serialize` for a known target type."""
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    return decode(tp, json.loads(raw))
