"""Byte-exact model size accounting from the serialized container."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..container import DTYPE_NAMES, dump_model, header_bytes, model_meta, model_records

KB = 1024
BUDGET_64K = 64 * KB
BUDGET_32K = 32 * KB


@dataclass
class TensorSize:
    name: str
    dtype: str
    elements: int
    payload_bytes: int
    qparam_bytes: int
    overhead_bytes: int

    @property
    def total(self):
        return self.payload_bytes + self.qparam_bytes + self.overhead_bytes


@dataclass
class SizeBreakdown:
    header_bytes: int
    tensors: list = field(default_factory=list)

    @property
    def payload_bytes(self):
        return sum(t.payload_bytes for t in self.tensors)

    @property
    def qparam_bytes(self):
        return sum(t.qparam_bytes for t in self.tensors)

    @property
    def overhead_bytes(self):
        return sum(t.overhead_bytes for t in self.tensors)

    @property
    def total_bytes(self):
        return self.header_bytes + sum(t.total for t in self.tensors)

    def by_dtype(self):
        out = {}
        for t in self.tensors:
            out[t.dtype] = out.get(t.dtype, 0) + t.payload_bytes
        return out

    def kb(self):
        return math.ceil(self.total_bytes / KB)

    def format(self):
        lines = [f"{'tensor':<32} {'dtype':>5} {'elems':>8} {'payload':>8} {'qparams':>8} {'rec':>5}"]
        for t in self.tensors:
            lines.append(f"{t.name:<32} {t.dtype:>5} {t.elements:>8} {t.payload_bytes:>8} "
                         f"{t.qparam_bytes:>8} {t.overhead_bytes:>5}")
        lines.append(f"header {self.header_bytes} B, payload {self.payload_bytes} B, "
                     f"qparams {self.qparam_bytes} B, records {self.overhead_bytes} B, "
                     f"total {self.total_bytes} B ({self.kb()} KB)")
        return "\n".join(lines)


def model_size(model, extra_meta=None) -> SizeBreakdown:
    records = model_records(model)
    sb = SizeBreakdown(header_bytes(model_meta(model, extra_meta)))
    for r in records:
        sb.tensors.append(TensorSize(r.name, DTYPE_NAMES[r.tag], int(r.array.size),
                                     r.payload_bytes(), r.qparam_bytes(), r.overhead_bytes()))
    return sb


def serialized_bytes(model, extra_meta=None):
    return len(dump_model(model, extra_meta))


def budget_check(nbytes, limit_bytes):
    if limit_bytes <= 0:
        raise ValueError("budget limit must be > 0")
    return nbytes <= limit_bytes


def budget_class(nbytes):
    if nbytes <= BUDGET_32K:
        return "Under 32 KB"
    if nbytes <= BUDGET_64K:
        return "Under 64 KB"
    return "Exceed 64 KB"
