"""Input pipelines: direct encoding, DVS event-to-frame conversion, loaders
and a seeded synthetic dataset.

Frames are stored ``[T][polarity][row][col]``; an event's ``x`` is its
column and ``y`` its row.

Event CSV format: one stream per file, UTF-8, ``\\n`` line endings, header
line ``t_us,x,y,p`` followed by one decimal-integer row per event
(timestamp in microseconds, column, row, polarity 0/1). The label of a
stream is not stored in the file; it comes from the dataset manifest.
"""

import io
import json
import struct
import warnings
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError

EVENT_CSV_HEADER = "t_us,x,y,p"


@dataclass
class EventStream:
    t: np.ndarray   # int64 microseconds
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    sensor_shape: tuple  # (H, W)
    label: int | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64).reshape(-1)
        self.x = np.asarray(self.x, dtype=np.int64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        self.p = np.asarray(self.p, dtype=np.int64).reshape(-1)
        self.sensor_shape = tuple(int(v) for v in self.sensor_shape)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise DataError("event field lengths differ")

    def __len__(self):
        return len(self.t)

    def validate(self):
        h, w = self.sensor_shape
        bad = (self.x < 0) | (self.x >= w) | (self.y < 0) | (self.y >= h)
        if bad.any():
            i = int(np.argmax(bad))
            raise DataError(f"event {i} at (x={self.x[i]}, y={self.y[i]}) outside sensor {self.sensor_shape}")
        if not np.isin(self.p, (0, 1)).all():
            raise DataError("polarity must be 0 or 1")

    def normalized(self, t0=None):
        """Stable-sorted by time, timestamps shifted so that ``t0`` (default: first event) is 0."""
        order = np.argsort(self.t, kind="stable")
        t = self.t[order]
        if t0 is None:
            t0 = int(t[0]) if len(t) else 0
        return EventStream(t - t0, self.x[order], self.y[order], self.p[order], self.sensor_shape, self.label)

    def __eq__(self, other):
        return (isinstance(other, EventStream) and self.sensor_shape == other.sensor_shape
                and self.label == other.label and all(
                    np.array_equal(getattr(self, f), getattr(other, f)) for f in "txyp"))


@dataclass
class FrameSequence:
    frames: np.ndarray  # uint8 [T, 2, H, W], values in {0, 1}
    dt_ms: float
    label: int | None = None


def dvs_to_frames(stream, dt_ms, T, t0=None):
    """Binary two-channel event images over consecutive windows of ``dt_ms``.

    Pixel ``(y, x)`` of channel ``p`` in frame ``i`` is 1 iff at least one
    polarity-``p`` event hit it during ``[i*dt, (i+1)*dt)``. Events after
    ``T`` windows are dropped; short streams leave trailing frames empty.
    """
    if not dt_ms > 0:
        raise ConfigError(f"dt must be positive, got {dt_ms}")
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    stream.validate()
    h, w = stream.sensor_shape
    frames = np.zeros((T, 2, h, w), dtype=np.uint8)
    if len(stream):
        s = stream.normalized(t0)
        win = np.floor_divide(s.t, dt_ms * 1000.0).astype(np.int64)
        keep = (win >= 0) & (win < T)
        frames[win[keep], s.p[keep], s.y[keep], s.x[keep]] = 1
    return FrameSequence(frames, dt_ms, stream.label)


def normalize_intensity(image):
    """Map an image into [0, 1]; warns when rescaling was necessary."""
    image = np.asarray(image)
    if np.issubdtype(image.dtype, np.integer):
        info = np.iinfo(image.dtype)
        warnings.warn(f"integer image rescaled by 1/{info.max}", stacklevel=2)
        return image.astype(np.float64) / info.max
    image = image.astype(np.float64, copy=False)
    lo, hi = float(image.min(initial=0.0)), float(image.max(initial=0.0))
    if lo < 0.0 or hi > 1.0:
        warnings.warn(f"intensities in [{lo}, {hi}] min-max normalized to [0, 1]", stacklevel=2)
        return (image - lo) / (hi - lo) if hi > lo else np.zeros_like(image)
    return image


def direct_encode_input(image, T):
    """Present the same real-valued image to the first layer at each of ``T`` steps.

    Returns a read-only broadcast view of shape ``[T, *image.shape]``.
    """
    image = normalize_intensity(image)
    return np.broadcast_to(image, (int(T),) + image.shape)


def downsample_frames(frames, out_hw):
    """Average-pool the two trailing spatial axes down to ``out_hw`` (integer factors)."""
    frames = np.asarray(frames, dtype=np.float64)
    h, w = frames.shape[-2:]
    oh, ow = out_hw
    if h % oh or w % ow:
        raise ConfigError(f"cannot downsample {h}x{w} to {oh}x{ow} by an integer factor")
    fh, fw = h // oh, w // ow
    return frames.reshape(frames.shape[:-2] + (oh, fh, ow, fw)).mean(axis=(-3, -1))


# ---- synthetic data -----------------------------------------------------------

@dataclass
class SynthDataset:
    images: np.ndarray   # [N, C, H, W] in [0, 1]
    labels: np.ndarray   # [N]
    events: list         # EventStream per sample
    templates: np.ndarray
    T: int
    dt_ms: float

    def frames(self):
        """Event form converted to binary frames, ``[N, T, 2, H, W]``."""
        return np.stack([dvs_to_frames(e, self.dt_ms, self.T, t0=0).frames for e in self.events])


def synth_patterns(num_classes, shape, T, samples_per_class, seed=0, noise=0.1, density=0.35, dt_ms=1.0):
    """Class templates (random binary masks) plus Gaussian pixel noise.

    Events are drawn per sample from its image: each of the ``T`` windows
    fires a pixel with probability equal to its intensity, polarity from a
    fair coin. Everything is determined by ``seed``.
    """
    shape = tuple(int(v) for v in shape)
    if num_classes < 1 or samples_per_class < 1 or T < 1 or len(shape) != 3:
        raise ConfigError("invalid synthetic dataset size")
    rng = np.random.default_rng(seed)
    templates = (rng.random((num_classes,) + shape) < density).astype(np.float64)
    for c in range(1, num_classes):
        while any(np.array_equal(templates[c], templates[j]) for j in range(c)):
            templates[c] = (rng.random(shape) < density).astype(np.float64)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    images = templates[labels] + noise * rng.standard_normal((len(labels),) + shape)
    images = np.clip(images, 0.0, 1.0)
    h, w = shape[1], shape[2]
    plane = images.mean(axis=1)
    events = []
    dt_us = int(round(dt_ms * 1000))
    for i, lab in enumerate(labels):
        fire = rng.random((T, h, w)) < plane[i]
        tt, yy, xx = np.nonzero(fire)
        ts = tt * dt_us + rng.integers(0, dt_us, size=len(tt))
        pol = rng.integers(0, 2, size=len(tt))
        order = np.argsort(ts, kind="stable")
        events.append(EventStream(ts[order], xx[order], yy[order], pol[order], (h, w), int(lab)))
    return SynthDataset(images, labels, events, templates, T, dt_ms)


# ---- IDX ----------------------------------------------------------------------

_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
_IDX_CODES = {np.dtype(v).newbyteorder("="): k for k, v in _IDX_TYPES.items()}


def read_idx(path):
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise ParseError(f"IDX header needs 4 bytes, file has {len(data)}", offset=len(data), path=path)
    zero, code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or code not in _IDX_TYPES:
        raise ParseError(f"bad IDX magic 0x{data[:4].hex()}", offset=0, path=path)
    header = 4 + 4 * ndim
    if len(data) < header:
        raise ParseError(f"IDX header expects {header} bytes, file has {len(data)}", offset=len(data), path=path)
    dims = struct.unpack(f">{ndim}I", data[4:header])
    dtype = np.dtype(_IDX_TYPES[code])
    expected = header + int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(data) != expected:
        raise ParseError(f"IDX payload: expected {expected} bytes total, got {len(data)}",
                         offset=min(len(data), expected), path=path)
    return np.frombuffer(data, dtype=dtype, offset=header).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(array, path):
    array = np.asarray(array)
    code = _IDX_CODES.get(array.dtype.newbyteorder("="))
    if code is None:
        raise DataError(f"dtype {array.dtype} has no IDX type code")
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.astype(_IDX_TYPES[code]).tobytes())


def load_idx(images_path, labels_path):
    images, labels = read_idx(images_path), read_idx(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return images, labels


# ---- event CSV ----------------------------------------------------------------

def write_event_csv(stream, path):
    buf = io.StringIO()
    buf.write(EVENT_CSV_HEADER + "\n")
    for row in zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(), stream.p.tolist()):
        buf.write("%d,%d,%d,%d\n" % row)
    Path(path).write_bytes(buf.getvalue().encode())


def load_event_csv(path, sensor_shape=None, label=None):
    """Parse one event stream. ``sensor_shape`` defaults to the bounding box of the events."""
    raw = Path(path).read_bytes()
    lines = raw.split(b"\n")
    if not lines or lines[0].strip() != EVENT_CSV_HEADER.encode():
        raise ParseError(f"expected header {EVENT_CSV_HEADER!r}", offset=0, path=path)
    offset = len(lines[0]) + 1
    rows = []
    for line in lines[1:]:
        if line.strip():
            parts = line.decode(errors="replace").strip().split(",")
            try:
                if len(parts) != 4:
                    raise ValueError
                rows.append([int(v) for v in parts])
            except ValueError:
                raise ParseError(f"malformed event row {line[:60]!r}", offset=offset, path=path) from None
        offset += len(line) + 1
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    if sensor_shape is None:
        sensor_shape = (int(arr[:, 2].max()) + 1, int(arr[:, 1].max()) + 1) if len(arr) else (1, 1)
    stream = EventStream(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], sensor_shape, label)
    stream.validate()
    return stream


def write_frames(seq, path):
    """Frames as ``.npz`` (``frames``, ``dt_ms``, ``label``).

    Zip entries carry a fixed timestamp so identical frames give identical bytes.
    """
    arrays = {"frames": seq.frames, "dt_ms": np.float64(seq.dt_ms),
              "label": np.int64(-1 if seq.label is None else seq.label)}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def read_frames(path):
    with np.load(path) as z:
        label = int(z["label"])
        return FrameSequence(z["frames"], float(z["dt_ms"]), None if label < 0 else label)


# ---- manifests ----------------------------------------------------------------

@dataclass
class Dataset:
    """``x`` is ``[N, C, H, W]`` for direct encoding or ``[N, T, C, H, W]`` for frames."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray | None = None
    test_y: np.ndarray | None = None
    encoding: str = "direct"
    meta: dict = field(default_factory=dict)


def load_manifest(path):
    """Load a dataset manifest (``idx``, ``events`` or ``synthetic`` format).

    Relative paths inside the manifest resolve against its directory.
    """
    path = Path(path)
    try:
        m = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"manifest is not valid JSON: {e.msg}", offset=e.pos, path=path) from None
    return dataset_from_manifest(m, path.parent)


def dataset_from_manifest(m, root=Path(".")):
    fmt = m.get("format")
    root = Path(root)
    if fmt == "synthetic":
        T = int(m.get("T", 10))
        ds = synth_patterns(int(m.get("num_classes", 2)), m.get("shape", [1, 8, 8]), T,
                            int(m.get("samples_per_class", 20)), int(m.get("seed", 0)),
                            float(m.get("noise", 0.1)))
        test = None
        if m.get("test_samples_per_class"):
            # same templates, fresh noise
            rng = np.random.default_rng([int(m.get("seed", 0)), 1])
            ty = np.repeat(np.arange(len(ds.templates)), int(m["test_samples_per_class"]))
            tx = np.clip(ds.templates[ty] + float(m.get("noise", 0.1)) * rng.standard_normal((len(ty),) + ds.images.shape[1:]), 0, 1)
            test = (tx, ty)
        if m.get("encoding", "direct") == "events":
            return Dataset(ds.frames().astype(np.float64), ds.labels, None, None, "frames", m)
        return Dataset(ds.images, ds.labels, *(test or (None, None)), "direct", m)
    if fmt == "idx":
        def part(p):
            imgs, labs = load_idx(root / p["images"], root / p["labels"])
            imgs = normalize_intensity(imgs)
            if imgs.ndim == 3:
                imgs = imgs[:, None]
            return imgs, labs.astype(np.int64)
        tx, ty = part(m["train"])
        test = part(m["test"]) if "test" in m else (None, None)
        return Dataset(tx, ty, *test, "direct", m)
    if fmt == "events":
        dt, T = float(m["dt_ms"]), int(m["T"])
        shape = tuple(m["sensor_shape"]) if "sensor_shape" in m else None
        down = m.get("downsample")

        def part(entries):
            xs, ys = [], []
            for e in entries:
                stream = load_event_csv(root / e["path"], shape, int(e["label"]))
                f = dvs_to_frames(stream, dt, T).frames.astype(np.float64)
                if down:
                    f = downsample_frames(f, down)
                xs.append(f)
                ys.append(int(e["label"]))
            return np.stack(xs), np.asarray(ys, dtype=np.int64)

        tx, ty = part(m["train"])
        test = part(m["test"]) if m.get("test") else (None, None)
        return Dataset(tx, ty, *test, "frames", m)
    raise DataError(f"unknown dataset format {fmt!r}")
