"""Toy 2-D generators, an IDX reader/writer, and seeded mini-batching."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_MASK64 = (1 << 64) - 1


class IdxFormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class XorShift64Star:
    """xorshift64* (shifts 12/25/27, multiplier 0x2545F4914F6CDD1D), seeded
    through splitmix64 so that nearby seeds give unrelated streams.

    Owned here so generated datasets do not depend on numpy's stream policy.
    """

    MULT = 0x2545F4914F6CDD1D

    def __init__(self, seed: int):
        z = (seed + 0x9E3779B97F4A7C15) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z ^= z >> 31
        self.state = z or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * self.MULT) & _MASK64

    def uniform(self) -> float:
        """Double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal_pair(self) -> tuple[float, float]:
        # Box-Muller; 1 - u keeps the log argument in (0, 1]
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        return r * math.cos(2.0 * math.pi * u2), r * math.sin(2.0 * math.pi * u2)

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    class_count: int
    domain_box: bool = False

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError(f"{self.inputs.shape[0]} inputs vs {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if self.domain_box and self.inputs.size and (self.inputs.min() < 0 or self.inputs.max() > 1):
            raise ValueError("domain-boxed inputs must lie in [0, 1]")

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.class_count, self.domain_box)


def gen_gaussian_blobs(seed: int, n_per_class: int, means=((-2.0, 0.0), (2.0, 0.0)), sigma: float = 0.5) -> Dataset:
    """Two isotropic Gaussian clouds, class c centred on ``means[c]``."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = XorShift64Star(seed)
    xs, ys = [], []
    for c, (mx, my) in enumerate(means):
        for _ in range(n_per_class):
            a, b = rng.normal_pair()
            xs.append((mx + sigma * a, my + sigma * b))
            ys.append(c)
    return Dataset(np.array(xs).reshape(-1, 2), np.array(ys), len(means))


def gen_circles(seed: int, n_per_class: int, radii=(1.0, 2.0), noise_sigma: float = 0.05) -> Dataset:
    """Two concentric noisy rings with uniform angle; class c has radius ``radii[c]``."""
    if len(set(radii)) != len(radii) or min(radii) <= 0:
        raise ValueError(f"radii must be distinct and positive, got {radii}")
    rng = XorShift64Star(seed)
    xs, ys = [], []
    for c, r in enumerate(radii):
        for _ in range(n_per_class):
            theta = 2.0 * math.pi * rng.uniform()
            a, b = rng.normal_pair()
            xs.append((r * math.cos(theta) + noise_sigma * a, r * math.sin(theta) + noise_sigma * b))
            ys.append(c)
    return Dataset(np.array(xs).reshape(-1, 2), np.array(ys), len(radii))


def _read_header(buf: bytes, magic: int, ndim: int, what: str):
    need = 4 + 4 * ndim
    if len(buf) < 4:
        raise IdxFormatError(f"{what} file truncated in header", len(buf))
    (got,) = struct.unpack_from(">I", buf, 0)
    if got != magic:
        raise IdxFormatError(f"bad {what} magic 0x{got:08x}, expected 0x{magic:08x}", 0)
    if len(buf) < need:
        raise IdxFormatError(f"{what} file truncated in header", len(buf))
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    body = int(np.prod(dims))
    if len(buf) < need + body:
        raise IdxFormatError(f"{what} file truncated: need {need + body} bytes", len(buf))
    return dims, np.frombuffer(buf, dtype=np.uint8, count=body, offset=need)


def load_idx(images_path, labels_path, class_count: int | None = None, limit: int | None = None) -> Dataset:
    """Read ubyte IDX image/label files; pixels are scaled by 1/255."""
    ibuf = Path(images_path).read_bytes()
    lbuf = Path(labels_path).read_bytes()
    (n_img, rows, cols), pixels = _read_header(ibuf, IDX_IMAGES_MAGIC, 3, "images")
    (n_lab,), labels = _read_header(lbuf, IDX_LABELS_MAGIC, 1, "labels")
    if n_img != n_lab:
        raise IdxFormatError(f"image count {n_img} != label count {n_lab}", 4)
    x = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    if limit is not None:
        x, y = x[:limit], y[:limit]
    if class_count is None:
        class_count = int(labels.max()) + 1 if n_lab else 1
    return Dataset(x, y, class_count, domain_box=True)


def write_idx(dataset: Dataset, images_path, labels_path, rows: int, cols: int) -> None:
    """Write a [0,1] dataset as ubyte IDX files (pixels rounded to k/255)."""
    n = len(dataset)
    if dataset.inputs.shape[1] != rows * cols:
        raise ValueError(f"{dataset.inputs.shape[1]} features do not form {rows}x{cols} images")
    pix = np.rint(np.clip(dataset.inputs, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols) + pix.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">2I", IDX_LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    )


def permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    """Fisher-Yates shuffle of range(n) determined by (seed, epoch)."""
    rng = XorShift64Star((seed * 0x100000001B3 + epoch) & _MASK64)
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.below(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return np.array(perm, dtype=np.int64)


def batches(dataset: Dataset, m: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Index arrays of ceil(n/m) mini-batches; the last one may be short."""
    if m < 1:
        raise ValueError("batch size must be >= 1")
    perm = permutation(len(dataset), seed, epoch)
    return [perm[i : i + m] for i in range(0, len(perm), m)]
