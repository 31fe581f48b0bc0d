"""Binary little-endian container for models and datasets.

Layout::

    b"TLOC" | u16 version | u32 meta_len | meta (sorted-key JSON, utf-8)
    | u32 n_tensors | n_tensors x record

    record = u16 name_len | name | u8 dtype tag | u8 ndim | ndim x u32 dim
             | u32 n_qparams | n_qparams x (f32 scale, i32 zero_point)
             | payload (C order)

The serialized length is the size figure used everywhere else, so the
record overhead is part of every size budget.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"TLOC"
VERSION = 1

DTYPE_TAGS = {
    np.dtype("<f8"): 0,
    np.dtype("<f4"): 1,
    np.dtype("<f2"): 2,
    np.dtype("u1"): 3,
    np.dtype("i1"): 4,
    np.dtype("<i4"): 5,
}
TAG_DTYPES = {v: k for k, v in DTYPE_TAGS.items()}
DTYPE_NAMES = {0: "f64", 1: "f32", 2: "f16", 3: "u8", 4: "i8", 5: "i32"}


class ContainerError(ValueError):
    pass


@dataclass
class TensorRecord:
    name: str
    array: np.ndarray
    qparams: list = field(default_factory=list)  # [(scale, zero_point)]

    @property
    def tag(self):
        dt = self.array.dtype.newbyteorder("<") if self.array.dtype.itemsize > 1 else self.array.dtype
        if dt not in DTYPE_TAGS:
            raise ContainerError(f"{self.name}: unsupported dtype {self.array.dtype}")
        return DTYPE_TAGS[dt]

    def overhead_bytes(self):
        return 2 + len(self.name.encode()) + 1 + 1 + 4 * self.array.ndim + 4

    def payload_bytes(self):
        return self.array.size * self.array.dtype.itemsize

    def qparam_bytes(self):
        return 8 * len(self.qparams)

    def nbytes(self):
        return self.overhead_bytes() + self.payload_bytes() + self.qparam_bytes()


def header_bytes(meta):
    return len(MAGIC) + 2 + 4 + len(_meta_blob(meta)) + 4


def _meta_blob(meta):
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(meta, records) -> bytes:
    buf = io.BytesIO()
    blob = _meta_blob(meta)
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(records)))
    seen = set()
    for rec in records:
        if rec.name in seen:
            raise ContainerError(f"duplicate tensor name {rec.name!r}")
        seen.add(rec.name)
        name = rec.name.encode("utf-8")
        arr = np.ascontiguousarray(rec.array)
        tag = rec.tag
        buf.write(struct.pack("<H", len(name)))
        buf.write(name)
        buf.write(struct.pack("<BB", tag, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(struct.pack("<I", len(rec.qparams)))
        for scale, zp in rec.qparams:
            buf.write(struct.pack("<fi", scale, zp))
        buf.write(arr.astype(TAG_DTYPES[tag], copy=False).tobytes())
    return buf.getvalue()


def read_container(data: bytes):
    """Parse container bytes into ``(meta, [TensorRecord])``."""
    mv = memoryview(data)
    if bytes(mv[:4]) != MAGIC:
        raise ContainerError("not a TLOC container (bad magic)")
    try:
        version, meta_len = struct.unpack_from("<HI", mv, 4)
        if version != VERSION:
            raise ContainerError(f"unsupported container version {version}")
        pos = 10
        meta = json.loads(bytes(mv[pos:pos + meta_len]).decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", mv, pos)
        pos += 4
        records = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", mv, pos)
            pos += 2
            name = bytes(mv[pos:pos + nlen]).decode("utf-8")
            pos += nlen
            tag, ndim = struct.unpack_from("<BB", mv, pos)
            pos += 2
            if tag not in TAG_DTYPES:
                raise ContainerError(f"{name}: unknown dtype tag {tag}")
            shape = struct.unpack_from(f"<{ndim}I", mv, pos)
            pos += 4 * ndim
            (nq,) = struct.unpack_from("<I", mv, pos)
            pos += 4
            qparams = [struct.unpack_from("<fi", mv, pos + 8 * i) for i in range(nq)]
            qparams = [(float(s), int(z)) for s, z in qparams]
            pos += 8 * nq
            dt = TAG_DTYPES[tag]
            n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + n > len(mv):
                raise ContainerError(f"{name}: truncated payload")
            arr = np.frombuffer(bytes(mv[pos:pos + n]), dtype=dt).reshape(shape)
            pos += n
            records.append(TensorRecord(name, arr.astype(dt.newbyteorder("="), copy=True), qparams))
    except struct.error as exc:
        raise ContainerError(f"truncated container: {exc}") from None
    if pos != len(mv):
        raise ContainerError(f"{len(mv) - pos} trailing bytes after tensor table")
    return meta, records


def records_checksum(records):
    h = hashlib.sha256()
    for rec in records:
        h.update(rec.name.encode())
        h.update(bytes([rec.tag]))
        h.update(np.asarray(rec.array.shape, dtype="<u4").tobytes())
        for s, z in rec.qparams:
            h.update(struct.pack("<fi", s, z))
        h.update(np.ascontiguousarray(rec.array).tobytes())
    return h.hexdigest()


# -- models ---------------------------------------------------------------
def model_records(model):
    """Tensor records for a (possibly quantized) model, in module order."""
    from .quantize import QuantizedLinear

    records = []
    for name, mod in model.named_modules():
        prefix = f"{name}." if name else ""
        if isinstance(mod, QuantizedLinear):
            records.append(TensorRecord(prefix + "codes", mod.codes,
                                        [(p.scale, p.zero_point) for p in mod.qparams]))
            if mod.bias is not None:
                records.append(TensorRecord(prefix + "bias", mod.bias.astype(np.float32)))
            if mod.outlier_idx.size:
                records.append(TensorRecord(prefix + "outlier_idx", mod.outlier_idx.astype(np.int32)))
                records.append(TensorRecord(prefix + "outlier_weight", mod.outlier_weight))
            continue
        for key, val in vars(mod).items():
            if getattr(val, "requires_grad", False):
                records.append(TensorRecord(prefix + key, val.data))
    return records


def model_meta(model, extra=None):
    from .quantize import quantized_layers

    qlayers = {name: {"mode": q.mode, "in": q.in_features, "out": q.out_features,
                      "signed": bool(q.qparams and q.qparams[0].qmin < 0)}
               for name, q in quantized_layers(model)}
    meta = {"kind": "model", "config": model.config.to_dict(), "quantized": qlayers}
    meta.update(getattr(model, "meta", {}) or {})
    if extra:
        meta.update(extra)
    return meta


def dump_model(model, extra=None) -> bytes:
    return write_container(model_meta(model, extra), model_records(model))


def save_model(model, path, extra=None):
    data = dump_model(model, extra)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def parse_model(data: bytes):
    from .models import ModelConfig, build_model
    from .models.base import linear_layers
    from .quantize import QuantizedLinear, QuantParams, _replace, int_range

    meta, records = read_container(data)
    if meta.get("kind") != "model":
        raise ContainerError("container does not hold a model")
    model = build_model(ModelConfig.from_dict(meta["config"]))
    by_name = {r.name: r for r in records}
    used = set()
    linears = {name: (parent, key) for name, parent, key, _ in linear_layers(model)}
    for lname, info in meta.get("quantized", {}).items():
        if lname not in linears:
            raise ContainerError(f"quantized layer {lname!r} not in the architecture")
        qmin, qmax = int_range(info["signed"])
        codes = by_name[f"{lname}.codes"]
        qparams = [QuantParams(s, z, qmin, qmax) for s, z in codes.qparams]
        bias = by_name.get(f"{lname}.bias")
        oi = by_name.get(f"{lname}.outlier_idx")
        ow = by_name.get(f"{lname}.outlier_weight")
        for r in (codes, bias, oi, ow):
            if r is not None:
                used.add(r.name)
        ql = QuantizedLinear(info["mode"], info["in"], info["out"], codes.array, qparams,
                             None if bias is None else bias.array,
                             None if oi is None else oi.array.astype(np.int64),
                             None if ow is None else ow.array)
        parent, key = linears[lname]
        _replace(parent, key, ql)
    state = {r.name: r.array for r in records if r.name not in used}
    params = dict(model.named_parameters())
    for name, arr in state.items():
        if name in params and arr.dtype != params[name].data.dtype:
            params[name].data = params[name].data.astype(arr.dtype)
    model.load_state_dict(state)
    model.meta = {k: v for k, v in meta.items() if k not in ("kind", "config", "quantized")}
    return model


def load_model(path):
    with open(path, "rb") as fh:
        return parse_model(fh.read())


def param_checksum(model):
    """sha256 over every stored tensor (names, dtypes, shapes, qparams, bytes)."""
    return records_checksum(model_records(model))


# -- datasets -------------------------------------------------------------
def dataset_records(ds):
    records = []
    for split in ("train", "val", "test"):
        seqs = getattr(ds, split)
        lengths = np.array([len(s) for s in seqs], dtype=np.int32)
        feats = (np.concatenate([s.features for s in seqs]).astype(np.float32) if seqs
                 else np.zeros((0, ds.feature_dim), np.float32))
        labels = (np.concatenate([s.labels for s in seqs]).astype(np.int32) if seqs
                  else np.zeros(0, np.int32))
        records += [TensorRecord(f"{split}.lengths", lengths),
                    TensorRecord(f"{split}.features", feats),
                    TensorRecord(f"{split}.labels", labels)]
    return records


def dump_dataset(ds) -> bytes:
    meta = {"kind": "dataset", "class_count": ds.class_count, "feature_dim": ds.feature_dim,
            "class_names": list(ds.class_names), "meta": ds.meta}
    return write_container(meta, dataset_records(ds))


def save_dataset(ds, path):
    data = dump_dataset(ds)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def parse_dataset(data: bytes):
    from .data import DatasetSplit, LabeledSequence

    meta, records = read_container(data)
    if meta.get("kind") != "dataset":
        raise ContainerError("container does not hold a dataset")
    by_name = {r.name: r.array for r in records}
    splits = {}
    for split in ("train", "val", "test"):
        lengths = by_name[f"{split}.lengths"]
        feats = by_name[f"{split}.features"]
        labels = by_name[f"{split}.labels"].astype(np.int64)
        offs = np.concatenate([[0], np.cumsum(lengths)])
        splits[split] = [LabeledSequence(feats[a:b], labels[a:b]) for a, b in zip(offs[:-1], offs[1:])]
    return DatasetSplit(splits["train"], splits["val"], splits["test"], meta["class_count"],
                        meta["feature_dim"], meta.get("class_names", []), meta.get("meta", {}))


def load_dataset(path):
    with open(path, "rb") as fh:
        return parse_dataset(fh.read())
