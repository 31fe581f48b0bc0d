"""RSSI ingestion, cleaning, windowing and normalisation.

Two real sources are supported (BLE in-home streams and the UJIIndoorLoc
WiFi fingerprints) plus a deterministic synthetic generator used for
desk-scale experiments. Everything ends in a :class:`DatasetSplit` of
:class:`LabeledSequence` objects with features scaled into ``[0, 1]``.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

INHOME_SENTINEL = -120.0
UJI_NOT_DETECTED = 100
UJI_SENTINEL = -105.0
UJI_AP_COUNT = 520
UJI_COLUMNS = 529


class MissingColumnError(KeyError):
    """A required column is absent from an input file."""


@dataclass
class RawStream:
    """Timestamped RSSI readings; ``NaN`` marks a missing reading."""

    timestamps: np.ndarray
    readings: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.readings = np.asarray(self.readings, dtype=np.float64)
        if self.readings.ndim == 1:
            self.readings = self.readings[:, None]
        self.labels = np.asarray(self.labels)
        n = len(self.timestamps)
        if self.readings.shape[0] != n or self.labels.shape[0] != n:
            raise ValueError("timestamps, readings and labels must have equal length")
        if n and np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps must be sorted")

    def __len__(self):
        return len(self.timestamps)


@dataclass
class LabeledSequence:
    features: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    class_count: int
    feature_dim: int
    class_names: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def validate(self):
        for name in ("train", "val", "test"):
            for seq in getattr(self, name):
                if seq.features.shape[-1] != self.feature_dim:
                    raise ValueError(f"{name}: feature dim {seq.features.shape[-1]} "
                                     f"!= {self.feature_dim}")
                if len(seq.labels) and (seq.labels.min() < 0 or seq.labels.max() >= self.class_count):
                    raise ValueError(f"{name}: class id outside [0, {self.class_count})")
                if np.any(~np.isfinite(seq.features)):
                    raise ValueError(f"{name}: missing values after preprocessing")
        return self

    def summary(self):
        hist = np.zeros(self.class_count, dtype=np.int64)
        for seq in self.train + self.val + self.test:
            hist += np.bincount(seq.labels, minlength=self.class_count)
        return {
            "sequences": {k: len(getattr(self, k)) for k in ("train", "val", "test")},
            "class_count": self.class_count,
            "feature_dim": self.feature_dim,
            "class_histogram": hist.tolist(),
        }


@dataclass
class ScalerParams:
    min: np.ndarray
    max: np.ndarray


# -- cleaning -------------------------------------------------------------
def resample_uniform(stream: RawStream, rate_hz=5.0) -> RawStream:
    """Snap a stream onto a fixed-rate grid by nearest-sample assignment.

    A grid point takes the reading of the closest original sample that
    lies within half a period; otherwise it is missing.
    """
    if len(stream) == 0:
        raise ValueError("cannot resample an empty stream")
    period = 1.0 / rate_hz
    t0, t1 = stream.timestamps[0], stream.timestamps[-1]
    n = int(np.floor((t1 - t0) / period + 1e-9)) + 1
    grid = t0 + period * np.arange(n)
    pos = np.searchsorted(stream.timestamps, grid)
    left = np.clip(pos - 1, 0, len(stream) - 1)
    right = np.clip(pos, 0, len(stream) - 1)
    dl = np.abs(grid - stream.timestamps[left])
    dr = np.abs(stream.timestamps[right] - grid)
    near = np.where(dr < dl, right, left)
    dist = np.minimum(dl, dr)
    readings = stream.readings[near].copy()
    readings[dist > period / 2 + 1e-9] = np.nan
    return RawStream(grid, readings, stream.labels[near])


def forward_fill(stream: RawStream, horizon=1.0, sentinel=INHOME_SENTINEL) -> RawStream:
    """Fill each AP's gaps with its last observed value for up to ``horizon``
    seconds; anything older (or before the first observation) becomes
    ``sentinel``."""
    if len(stream) == 0:
        raise ValueError("cannot forward-fill an empty stream")
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    r = stream.readings
    t = stream.timestamps
    present = ~np.isnan(r)
    if present.all():
        return RawStream(t.copy(), r.copy(), stream.labels.copy())
    idx = np.where(present, np.arange(len(t))[:, None], -1)
    last = np.maximum.accumulate(idx, axis=0)
    cols = np.arange(r.shape[1])[None, :]
    safe = np.maximum(last, 0)
    filled = r[safe, cols]
    age = t[:, None] - t[safe]
    ok = (last >= 0) & (age <= horizon + 1e-9)
    out = np.where(present, r, np.where(ok, filled, sentinel))
    return RawStream(t.copy(), out, stream.labels.copy())


def window_count(n, window_len, stride):
    return max(0, (n - window_len) // stride + 1)


def make_windows(stream, window_len, stride):
    """Fixed-length segments ``[s, s + window_len)`` at offsets ``0, stride, ...``.

    Accepts a :class:`RawStream` or a :class:`LabeledSequence`; a trailing
    remainder shorter than ``window_len`` is dropped.
    """
    if window_len < 1 or not 1 <= stride <= window_len:
        raise ValueError("need window_len >= 1 and 1 <= stride <= window_len")
    feats = stream.readings if isinstance(stream, RawStream) else stream.features
    labels = stream.labels
    return [LabeledSequence(feats[s:s + window_len].copy(), labels[s:s + window_len].copy())
            for s in range(0, window_count(len(labels), window_len, stride) * stride, stride)]


def _stack_features(items):
    arrs = []
    for it in items:
        if isinstance(it, RawStream):
            arrs.append(it.readings)
        elif isinstance(it, LabeledSequence):
            arrs.append(it.features)
        else:
            arrs.append(np.asarray(it, dtype=np.float64))
    return np.concatenate([a.reshape(-1, a.shape[-1]) for a in arrs], axis=0)


def fit_scaler(train) -> ScalerParams:
    """Per-feature min/max over the training data (streams, sequences or arrays)."""
    x = _stack_features(train)
    if x.size == 0:
        raise ValueError("cannot fit a scaler on empty data")
    lo, hi = np.nanmin(x, axis=0), np.nanmax(x, axis=0)
    const = hi <= lo
    if const.any():
        warnings.warn(f"constant features {np.flatnonzero(const).tolist()} will map to 0",
                      RuntimeWarning, stacklevel=2)
    return ScalerParams(lo, hi)


def apply_scaler(x, params: ScalerParams):
    x = np.asarray(x, dtype=np.float64)
    span = params.max - params.min
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (x - params.min) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


def _scale_all(seqs, params, dtype=np.float32):
    return [LabeledSequence(apply_scaler(s.features, params).astype(dtype), s.labels)
            for s in seqs]


# -- splitting ------------------------------------------------------------
def stratified_split(strata, fraction=0.75, seed=0):
    """Seeded stratified split; returns sorted ``(first, second)`` index arrays.

    The first part holds ``floor(fraction * n)`` items, allocated across
    strata by largest remainder so the total is exact.
    """
    strata = np.asarray(strata)
    n = len(strata)
    rng = np.random.default_rng(seed)
    n_first = int(np.floor(fraction * n + 1e-9))
    classes, inverse = np.unique(strata, return_inverse=True)
    counts = np.bincount(inverse)
    quota = fraction * counts
    take = np.floor(quota).astype(int)
    short = n_first - take.sum()
    if short > 0:
        order = np.lexsort((np.arange(len(classes)), -(quota - take)))
        take[order[:short]] += 1
    first = []
    for c in range(len(classes)):
        members = np.flatnonzero(inverse == c)
        rng.shuffle(members)
        first.extend(members[:take[c]].tolist())
    first = np.sort(np.array(first, dtype=np.int64))
    second = np.setdiff1d(np.arange(n), first)
    return first, second


def _majority(labels):
    vals, counts = np.unique(labels, return_counts=True)
    return vals[np.argmax(counts)]


def _encode(labels, names, where):
    lookup = {name: i for i, name in enumerate(names)}
    out = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        key = lab.item() if hasattr(lab, "item") else lab
        if key not in lookup:
            raise ValueError(f"{where}: unknown class label {key!r} at row {i}")
        out[i] = lookup[key]
    return out


# -- in-home BLE ----------------------------------------------------------
def read_stream_csv(path, label_column="label", timestamp_column="timestamp", delimiter=","):
    """Read ``timestamp, AP_1..AP_D, label`` rows; empty cells are missing."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        header = [h.strip() for h in header]
        for col in (timestamp_column, label_column):
            if col not in header:
                raise MissingColumnError(col)
        ti, li = header.index(timestamp_column), header.index(label_column)
        ap_cols = [i for i in range(len(header)) if i not in (ti, li)]
        ts, rd, lb = [], [], []
        for row in reader:
            if not row:
                continue
            ts.append(float(row[ti]))
            rd.append([float(row[i]) if row[i].strip() else np.nan for i in ap_cols])
            lab = row[li].strip()
            lb.append(int(lab) if lab.lstrip("-").isdigit() else lab)
    return RawStream(np.array(ts), np.array(rd, dtype=np.float64).reshape(len(ts), len(ap_cols)),
                     np.array(lb))


def clean_stream(stream, rate_hz=5.0, horizon=1.0):
    return forward_fill(resample_uniform(stream, rate_hz), horizon)


def prepare_inhome(fingerprint, free_living, rate_hz=5.0, horizon=1.0, window_len=20,
                   stride=10, train_fraction=0.75, seed=0) -> DatasetSplit:
    """Fingerprint streams -> 75/25 train/val windows; free-living -> test."""
    fp = [clean_stream(s, rate_hz, horizon) for s in fingerprint]
    fl = [clean_stream(s, rate_hz, horizon) for s in free_living]
    names = sorted({lab.item() if hasattr(lab, "item") else lab
                    for s in fp for lab in s.labels}, key=lambda v: (str(type(v)), v))
    fp_w = [w for s in fp for w in make_windows(s, window_len, stride)]
    fl_w = [w for s in fl for w in make_windows(s, window_len, stride)]
    if not fp_w:
        raise ValueError("fingerprint data is shorter than one window")
    for w in fp_w:
        w.labels = _encode(w.labels, names, "fingerprint")
    for w in fl_w:
        w.labels = _encode(w.labels, names, "free-living")
    tr, va = stratified_split([_majority(w.labels) for w in fp_w], train_fraction, seed)
    train = [fp_w[i] for i in tr]
    val = [fp_w[i] for i in va]
    params = fit_scaler(train)
    ds = DatasetSplit(_scale_all(train, params), _scale_all(val, params), _scale_all(fl_w, params),
                      len(names), fp[0].readings.shape[1], [str(n) for n in names],
                      {"source": "inhome", "seed": seed, "window_len": window_len,
                       "stride": stride, "scaler_min": params.min.tolist(),
                       "scaler_max": params.max.tolist()})
    return ds.validate()


# -- UJIIndoorLoc ---------------------------------------------------------
@dataclass
class UjiRecords:
    rssi: np.ndarray
    building: np.ndarray
    floor: np.ndarray
    longitude: np.ndarray
    latitude: np.ndarray


def read_uji_csv(path) -> UjiRecords:
    """Parse the published 529-column UJIIndoorLoc CSV layout."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip().strip('"') for h in next(reader)]
        rows = [r for r in reader if r]
    need = ["LONGITUDE", "LATITUDE", "FLOOR", "BUILDINGID"]
    for col in need:
        if col not in header:
            raise MissingColumnError(col)
    waps = [i for i, h in enumerate(header) if h.startswith("WAP")]
    if len(waps) != UJI_AP_COUNT:
        raise ValueError(f"{path}: expected {UJI_AP_COUNT} WAP columns, found {len(waps)}")
    data = np.array(rows, dtype=np.float64)
    col = {h: i for i, h in enumerate(header)}
    return UjiRecords(data[:, waps], data[:, col["BUILDINGID"]].astype(int),
                      data[:, col["FLOOR"]].astype(int), data[:, col["LONGITUDE"]],
                      data[:, col["LATITUDE"]])


def uji_area_labels(rec: UjiRecords, cell_size=50.0):
    """Joint (building, floor, grid cell) keys; cells are ``cell_size`` metres."""
    cx = np.floor(rec.longitude / cell_size).astype(int)
    cy = np.floor(rec.latitude / cell_size).astype(int)
    return [(int(b), int(f), int(x), int(y))
            for b, f, x, y in zip(rec.building, rec.floor, cx, cy)]


def load_uji(train: UjiRecords, test: UjiRecords, train_fraction=0.75, seed=0,
             cell_size=50.0) -> DatasetSplit:
    """UJI records -> length-1 sequences with joint building/floor/area classes.

    The published training file is split ``train_fraction`` / rest into
    train and validation; the published validation file becomes the test
    split.
    """
    keys_tr = uji_area_labels(train, cell_size)
    keys_te = uji_area_labels(test, cell_size)
    names = sorted(set(keys_tr))
    lookup = {k: i for i, k in enumerate(names)}
    unknown = [i for i, k in enumerate(keys_te) if k not in lookup]
    if unknown:
        raise ValueError(f"test records with classes unseen in training: rows {unknown[:20]}"
                         f"{' ...' if len(unknown) > 20 else ''}")
    y_tr = np.array([lookup[k] for k in keys_tr], dtype=np.int64)
    y_te = np.array([lookup[k] for k in keys_te], dtype=np.int64)

    def clean(r):
        r = r.astype(np.float64).copy()
        r[r == UJI_NOT_DETECTED] = UJI_SENTINEL
        return r

    x_tr, x_te = clean(train.rssi), clean(test.rssi)
    tr, va = stratified_split(y_tr, train_fraction, seed)
    params = fit_scaler([x_tr[tr]])

    def seqs(x, y, idx):
        xs = apply_scaler(x[idx], params).astype(np.float32)
        return [LabeledSequence(xs[i:i + 1], y[idx][i:i + 1]) for i in range(len(idx))]

    ds = DatasetSplit(seqs(x_tr, y_tr, tr), seqs(x_tr, y_tr, va),
                      seqs(x_te, y_te, np.arange(len(y_te))), len(names), x_tr.shape[1],
                      [f"B{b}F{f}C{x},{y}" for b, f, x, y in names],
                      {"source": "uji", "seed": seed, "cell_size": cell_size})
    return ds.validate()


# -- synthetic ------------------------------------------------------------
@dataclass
class SynthConfig:
    room_count: int = 3
    ap_count: int = 4
    samples_per_room: int = 400
    room_means: np.ndarray | None = None
    noise_std: float = 3.0
    dropout: float = 0.05
    seed: int = 7
    rate_hz: float = 5.0
    dwell: tuple = (25, 75)
    window_len: int = 20
    stride: int = 10
    test_samples_per_room: int = 200

    def means(self):
        if self.room_means is not None:
            m = np.asarray(self.room_means, dtype=np.float64)
            if m.shape != (self.room_count, self.ap_count):
                raise ValueError(f"room_means must be {(self.room_count, self.ap_count)}")
            return m
        # each room is loud at its own AP and progressively quieter elsewhere
        r = np.arange(self.room_count)[:, None]
        a = np.arange(self.ap_count)[None, :]
        return -40.0 - 12.0 * ((a - r) % self.ap_count) - 3.0 * ((r + a) % self.room_count)


def _walk(cfg, n, rng):
    rooms = np.empty(n, dtype=np.int64)
    pos, room = 0, int(rng.integers(cfg.room_count))
    lo, hi = cfg.dwell
    while pos < n:
        d = int(rng.integers(lo, hi + 1))
        rooms[pos:pos + d] = room
        pos += d
        room = int((room + rng.integers(1, cfg.room_count)) % cfg.room_count)
    return rooms


def synth_stream(cfg: SynthConfig, n, rng) -> RawStream:
    rooms = _walk(cfg, n, rng)
    means = cfg.means()
    readings = means[rooms] + cfg.noise_std * rng.standard_normal((n, cfg.ap_count))
    readings = np.clip(readings, -110.0, 0.0)
    if cfg.dropout > 0:
        drop = rng.random(readings.shape) < cfg.dropout
        # a full scan is taken on entering a room, so fills never cross rooms
        drop[np.r_[True, rooms[1:] != rooms[:-1]]] = False
        readings[drop] = np.nan
    return RawStream(np.arange(n) / cfg.rate_hz, readings, rooms)


def generate_synthetic(cfg: SynthConfig | None = None) -> DatasetSplit:
    """Random walks among rooms, cleaned and windowed like in-home data.

    Train, validation and test come from three independent walks seeded
    from ``cfg.seed``; validation is a third of the training length.
    """
    cfg = cfg or SynthConfig()
    if cfg.room_count < 2:
        raise ValueError("need at least two rooms")
    if cfg.noise_std < 0 or not 0 <= cfg.dropout < 1:
        raise ValueError("noise_std must be >= 0 and dropout in [0, 1)")
    means = cfg.means()
    if len({tuple(row) for row in means}) != cfg.room_count:
        raise ValueError("room means must be pairwise distinct")
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    n_train = cfg.samples_per_room * cfg.room_count
    lengths = (n_train, n_train // 3, cfg.test_samples_per_room * cfg.room_count)
    streams = [forward_fill(synth_stream(cfg, n, np.random.default_rng(s)),
                            horizon=1.0)
               for n, s in zip(lengths, seeds)]
    windows = [make_windows(s, cfg.window_len, cfg.stride) for s in streams]
    params = fit_scaler(windows[0])
    train, val, test = (_scale_all(w, params) for w in windows)
    ds = DatasetSplit(train, val, test, cfg.room_count, cfg.ap_count,
                      [f"room{i}" for i in range(cfg.room_count)],
                      {"source": "synthetic", "seed": cfg.seed,
                       "scaler_min": params.min.tolist(), "scaler_max": params.max.tolist()})
    return ds.validate()
