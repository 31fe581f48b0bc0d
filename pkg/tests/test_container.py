import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tinyloc.container import (MAGIC, ContainerError, TensorRecord, dump_dataset, dump_model,
                               header_bytes, load_model, param_checksum, parse_dataset,
                               parse_model, read_container, save_model, write_container)
from tinyloc.models import ModelConfig, build_model
from tinyloc.quantize import dynamic_quantize_model, quantize_model_static

DTYPES = [np.float64, np.float32, np.float16, np.uint8, np.int8, np.int32]


def test_empty_container_layout():
    data = write_container({}, [])
    assert data[:4] == MAGIC
    assert struct.unpack_from("<HI", data, 4) == (1, 2)
    assert len(data) == header_bytes({}) == 4 + 2 + 4 + 2 + 4


def test_record_layout_by_hand():
    rec = TensorRecord("w", np.arange(6, dtype=np.uint8).reshape(2, 3), [(0.5, 3)])
    data = write_container({"a": 1}, [rec])
    body = data[header_bytes({"a": 1}):]
    assert body[:3] == b"\x01\x00w" and body[3:5] == bytes([3, 2])
    assert struct.unpack_from("<2I", body, 5) == (2, 3)
    assert struct.unpack_from("<Ifi", body, 13) == (1, 0.5, 3)
    assert body[25:] == bytes(range(6))
    assert rec.overhead_bytes() == 2 + 1 + 2 + 8 + 4


@given(st.sampled_from(DTYPES), st.lists(st.integers(0, 4), min_size=0, max_size=3),
       st.integers(0, 2**32 - 1), st.integers(0, 3))
def test_records_round_trip(dtype, shape, seed, nq):
    r = np.random.default_rng(seed)
    arr = (r.normal(size=shape) * 50).astype(dtype)
    qp = [(float(np.float32(r.uniform(0.01, 1))), int(r.integers(-128, 256))) for _ in range(nq)]
    data = write_container({"k": [1, 2]}, [TensorRecord("t", arr, qp)])
    meta, recs = read_container(data)
    assert meta == {"k": [1, 2]} and recs[0].qparams == qp
    assert recs[0].array.dtype == np.dtype(dtype)
    np.testing.assert_array_equal(recs[0].array, arr)
    assert write_container(meta, recs) == data


@pytest.mark.parametrize("mutate,match", [
    (lambda d: b"XLOC" + d[4:], "magic"),
    (lambda d: d[:4] + struct.pack("<H", 9) + d[6:], "version"),
    (lambda d: d[:-1], "truncated"),
    (lambda d: d + b"\x00", "trailing"),
])
def test_corrupt_containers_rejected(mutate, match):
    data = write_container({}, [TensorRecord("x", np.ones(3, np.float32))])
    with pytest.raises(ContainerError, match=match):
        read_container(mutate(data))


def test_unsupported_dtype():
    with pytest.raises(ContainerError):
        write_container({}, [TensorRecord("x", np.ones(2, np.complex64))])


@pytest.fixture(scope="module")
def variants():
    m = build_model(ModelConfig("mdcsa", 8, (1, 4), 4, 3, seed=2))
    x = np.random.default_rng(0).uniform(size=(3, 6, 4))
    x[..., 2] *= 20  # push one input past the outlier threshold
    return {"baseline": m, "static": quantize_model_static(m, list(x)),
            "dynamic": dynamic_quantize_model(m)}, x


@pytest.mark.parametrize("kind", ["baseline", "static", "dynamic"])
def test_model_round_trip_is_bit_identical(variants, kind, tmp_path):
    models, x = variants
    m = models[kind]
    m.meta = {"variant": kind}
    data = dump_model(m)
    back = parse_model(data)
    assert dump_model(back) == data
    assert back.meta == {"variant": kind}
    np.testing.assert_array_equal(back.emissions(x).data, m.emissions(x).data)
    assert param_checksum(back) == param_checksum(m)
    p = tmp_path / "m.tloc"
    assert save_model(m, p) == len(data) == p.stat().st_size
    assert dump_model(load_model(p)) == data


def test_static_container_holds_fp16_outliers(variants):
    models, _ = variants
    _, recs = read_container(dump_model(models["static"]))
    tags = {r.name: r.tag for r in recs}
    assert any(t == 2 for t in tags.values()) and any(t == 3 for t in tags.values())


def test_parse_rejects_dataset_container(synth):
    with pytest.raises(ContainerError):
        parse_model(dump_dataset(synth))


def test_dataset_round_trip(synth):
    data = dump_dataset(synth)
    back = parse_dataset(data)
    assert dump_dataset(back) == data
    assert (back.class_count, back.feature_dim, back.class_names) == \
        (synth.class_count, synth.feature_dim, synth.class_names)
    for a, b in zip(back.test, synth.test):
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)
