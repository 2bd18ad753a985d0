"""Walk and rebuild nested dataclass/list containers of tensors."""
from __future__ import annotations

import dataclasses
from typing import Callable, Iterator

from .tensor import Tensor


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from named_tensors(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_tensors(item, f"{prefix}.{i}" if prefix else str(i))


def map_tensors(obj, fn: Callable[[str, Tensor], Tensor], prefix: str = ""):
    if isinstance(obj, Tensor):
        return fn(prefix, obj)
    if dataclasses.is_dataclass(obj):
        changes = {}
        for f in dataclasses.fields(obj):
            if not f.init:
                continue
            value = getattr(obj, f.name)
            changes[f.name] = map_tensors(value, fn, f"{prefix}.{f.name}" if prefix else f.name)
        return dataclasses.replace(obj, **changes)
    if isinstance(obj, list):
        return [map_tensors(v, fn, f"{prefix}.{i}" if prefix else str(i)) for i, v in enumerate(obj)]
    if isinstance(obj, tuple):
        return tuple(map_tensors(v, fn, f"{prefix}.{i}" if prefix else str(i)) for i, v in enumerate(obj))
    return obj


def count_parameters(obj) -> int:
    return sum(t.data.size for _, t in named_tensors(obj) if t.requires_grad)
