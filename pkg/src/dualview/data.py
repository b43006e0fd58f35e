"""Procedural paired-view datasets with a physical-spacing channel.

Each sample is one latent lesion observed in two orthogonal views.  The
class signal lives in physical lesion size (and texture frequency), so a
network can only read it after combining pixel area with the per-sample
mm/pixel spacing.  The two views carry anti-correlated size noise, which
makes the pair strictly more informative than either view alone.

Everything here is a pure function of (seed, spec, epoch): generation,
splitting and batch order are all derived from `seeding.rng_for`.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .seeding import TAG_BATCH, TAG_DATA, TAG_SPLIT, rng_for

CACHE_MAGIC = b"DVDS"
CACHE_VERSION = 1


@dataclass(frozen=True)
class GenSpec:
    """Knobs for the generator; defaults are the desk-scale profile."""

    n_samples: int = 600
    n_classes: int = 3
    image_size: int = 32
    in_channels: int = 1
    class_ratios: tuple[float, ...] = (518.0, 772.0, 367.0)
    base_radius_mm: float = 1.15
    class_gap_mm: float = 0.55
    class_gap_shrink: float = 1.0  # gap between classes g, g+1 scales by shrink^g
    radius_noise_mm: float = 0.10
    view_radius_noise_mm: float = 0.16
    aspect_sigma: float = 0.18
    texture_freq_base: float = 0.7
    texture_freq_gap: float = 0.45
    texture_freq_noise: float = 0.12
    texture_amp: float = 0.25
    spacing_range: tuple[float, float] = (0.30, 0.45)
    background: float = 0.1
    blob_intensity: float = 0.8
    noise_sigma: float = 0.04
    edge_softness: float = 0.06
    center_jitter_frac: float = 0.06

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.n_samples < self.n_classes:
            raise ValueError(
                f"n_samples ({self.n_samples}) must be >= n_classes ({self.n_classes})"
            )
        if len(self.class_ratios) != self.n_classes:
            raise ValueError("class_ratios length must equal n_classes")
        if min(self.class_ratios) <= 0:
            raise ValueError("class_ratios must be positive")
        lo, hi = self.spacing_range
        if not (0 < lo <= hi):
            raise ValueError(f"invalid spacing_range {self.spacing_range}")
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")


@dataclass
class SamplePair:
    """One labeled two-view observation.

    ``index`` is unique, stable across epochs, and addresses the sample's
    memory-bank slot.
    """

    index: int
    label: int
    spacing: float
    x_long: np.ndarray  # (C_in, H, W) float32
    x_trans: np.ndarray  # (C_in, H, W) float32


@dataclass
class Dataset:
    spec: GenSpec
    seed: int
    samples: list[SamplePair] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def spacings(self) -> np.ndarray:
        return np.array([s.spacing for s in self.samples], dtype=np.float64)


@dataclass(frozen=True)
class DatasetSplit:
    train: list[int]
    val: list[int]
    test: list[int]


@dataclass(frozen=True)
class SpacingStats:
    mean: float
    std: float


def largest_remainder_counts(total: int, ratios) -> list[int]:
    """Apportion ``total`` into len(ratios) integer counts proportional to
    ``ratios`` (largest-remainder rule; ties resolved by lower index)."""
    ratios = np.asarray(ratios, dtype=np.float64)
    quota = total * ratios / ratios.sum()
    counts = np.floor(quota).astype(int)
    order = sorted(range(len(ratios)), key=lambda k: (-(quota[k] - counts[k]), k))
    for k in order[: total - counts.sum()]:
        counts[k] += 1
    return counts.tolist()


def _class_labels(seed: int, spec: GenSpec) -> np.ndarray:
    counts = largest_remainder_counts(spec.n_samples, spec.class_ratios)
    if min(counts) < 1:
        raise ValueError(f"class with zero samples for N={spec.n_samples}, ratios={spec.class_ratios}")
    labels = np.repeat(np.arange(spec.n_classes), counts)
    return rng_for(seed, TAG_DATA, 0).permutation(labels)


def _render_view(
    spec: GenSpec,
    radius_mm: float,
    aspect: float,
    angle: float,
    freq: float,
    spacing: float,
    center: tuple[float, float],
    noise: np.ndarray,
) -> np.ndarray:
    h = w = spec.image_size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dy = (ys - center[0]) * spacing
    dx = (xs - center[1]) * spacing
    ca, sa = np.cos(angle), np.sin(angle)
    u = dx * ca + dy * sa
    v = -dx * sa + dy * ca
    a = radius_mm * aspect
    b = radius_mm / aspect
    d = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    mask = 1.0 / (1.0 + np.exp((d - 1.0) / spec.edge_softness))
    rho = np.sqrt(dx * dx + dy * dy)
    texture = 1.0 + spec.texture_amp * np.sin(2.0 * np.pi * freq * rho)
    img = spec.background + spec.blob_intensity * mask * texture + noise
    return img.astype(np.float32)[None, :, :]  # C_in=1 plane


def generate(seed: int, spec: GenSpec) -> Dataset:
    """Deterministically build the paired-view dataset for (seed, spec)."""
    spec.validate()
    labels = _class_labels(seed, spec)
    half_extent = 0.5 * spec.image_size
    samples = []
    for i in range(spec.n_samples):
        g = int(labels[i])
        rng = rng_for(seed, TAG_DATA, 1 + i)
        spacing = float(rng.uniform(*spec.spacing_range))
        offset = spec.class_gap_mm * sum(spec.class_gap_shrink**j for j in range(g))
        radius = spec.base_radius_mm + offset + rng.normal(0.0, spec.radius_noise_mm)
        radius = max(radius, 0.3 * spec.base_radius_mm)
        delta = rng.normal(0.0, spec.view_radius_noise_mm)
        r_long = max(radius + delta, 0.25 * spec.base_radius_mm)
        r_trans = max(radius - delta, 0.25 * spec.base_radius_mm)
        aspect = float(np.exp(rng.normal(0.0, spec.aspect_sigma)))
        freq_offset = spec.texture_freq_gap * sum(spec.class_gap_shrink**j for j in range(g))
        freq = max(spec.texture_freq_base + freq_offset + rng.normal(0.0, spec.texture_freq_noise), 0.1)
        jitter = spec.center_jitter_frac * spec.image_size
        center = (
            half_extent + rng.uniform(-jitter, jitter),
            half_extent + rng.uniform(-jitter, jitter),
        )
        angle_long = float(rng.uniform(0.0, np.pi))
        angle_trans = float(rng.uniform(0.0, np.pi))
        noise_long = rng.normal(0.0, spec.noise_sigma, (spec.image_size, spec.image_size))
        noise_trans = rng.normal(0.0, spec.noise_sigma, (spec.image_size, spec.image_size))
        x_long = _render_view(spec, r_long, aspect, angle_long, freq, spacing, center, noise_long)
        x_trans = _render_view(spec, r_trans, aspect, angle_trans, freq, spacing, center, noise_trans)
        if spec.in_channels != 1:
            x_long = np.repeat(x_long, spec.in_channels, axis=0)
            x_trans = np.repeat(x_trans, spec.in_channels, axis=0)
        samples.append(SamplePair(index=i, label=g, spacing=spacing, x_long=x_long, x_trans=x_trans))
    return Dataset(spec=spec, seed=seed, samples=samples)


# -- split / batching ---------------------------------------------------------


def split(n_or_dataset, seed: int, ratios: tuple[float, float, float] = (7.0, 1.0, 2.0)) -> DatasetSplit:
    """Random disjoint train/val/test index lists covering [0, N)."""
    n = n_or_dataset if isinstance(n_or_dataset, int) else len(n_or_dataset)
    sizes = largest_remainder_counts(n, ratios)
    perm = rng_for(seed, TAG_SPLIT).permutation(n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return DatasetSplit(
        train=sorted(int(i) for i in perm[:a]),
        val=sorted(int(i) for i in perm[a:b]),
        test=sorted(int(i) for i in perm[b:]),
    )


def batches(indices: list[int], batch_size: int, seed: int, epoch: int) -> list[list[int]]:
    """Shuffled batches for one epoch; every index appears exactly once."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    perm = rng_for(seed, TAG_BATCH, epoch).permutation(np.asarray(indices, dtype=np.int64))
    return [perm[i : i + batch_size].tolist() for i in range(0, len(perm), batch_size)]


# -- spacing channel ----------------------------------------------------------


def spacing_stats(dataset: Dataset, train_indices: list[int]) -> SpacingStats:
    sp = np.array([dataset.samples[i].spacing for i in train_indices], dtype=np.float64)
    std = float(sp.std())
    return SpacingStats(mean=float(sp.mean()), std=std if std > 1e-12 else 1.0)


def attach_spacing_channel(x: np.ndarray, spacing: float, stats: SpacingStats) -> np.ndarray:
    """Append one constant plane holding the z-scored spacing value."""
    if spacing <= 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    value = (spacing - stats.mean) / stats.std
    plane = np.full((1,) + x.shape[1:], value, dtype=x.dtype)
    return np.concatenate([x, plane], axis=0)


# -- on-disk cache --------------------------------------------------------------
# Layout (all little-endian):
#   magic "DVDS" | version u32 | N u32 | K u32 | H u32 | W u32 | C_in u32
#   then per sample:
#   index u32 | label u32 | spacing f64 | x_long C_in*H*W f32 | x_trans C_in*H*W f32


def save_cache(dataset: Dataset, path) -> None:
    spec = dataset.spec
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(
            struct.pack(
                "<IIIIII",
                CACHE_VERSION,
                len(dataset),
                spec.n_classes,
                spec.image_size,
                spec.image_size,
                spec.in_channels,
            )
        )
        for s in dataset.samples:
            f.write(struct.pack("<II", s.index, s.label))
            f.write(struct.pack("<d", s.spacing))
            f.write(s.x_long.astype("<f4").tobytes())
            f.write(s.x_trans.astype("<f4").tobytes())


def load_cache(path, spec: GenSpec | None = None) -> Dataset:
    with open(path, "rb") as f:
        data = f.read()
    buf = io.BytesIO(data)
    magic = buf.read(4)
    if magic != CACHE_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    version, n, k, h, w, c_in = struct.unpack("<IIIIII", buf.read(24))
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    if spec is None:
        spec = GenSpec(n_samples=n, n_classes=k, image_size=h, in_channels=c_in)
    plane = c_in * h * w
    samples = []
    for _ in range(n):
        index, label = struct.unpack("<II", buf.read(8))
        (spacing,) = struct.unpack("<d", buf.read(8))
        x_long = np.frombuffer(buf.read(4 * plane), dtype="<f4").reshape(c_in, h, w).copy()
        x_trans = np.frombuffer(buf.read(4 * plane), dtype="<f4").reshape(c_in, h, w).copy()
        samples.append(SamplePair(index=index, label=label, spacing=spacing, x_long=x_long, x_trans=x_trans))
    return Dataset(spec=spec, seed=-1, samples=samples)


# -- independent size oracle -----------------------------------------------------
# A deliberately dumb classifier: threshold the spacing-corrected blob area.
# Used to certify that the generated classes are separable at all, and to
# calibrate what accuracy a trained model should reach.


def blob_area_mm2(sample: SamplePair, spec: GenSpec) -> tuple[float, float]:
    thresh = spec.background + 0.5 * spec.blob_intensity
    scale = sample.spacing**2
    a_long = float((sample.x_long[0] > thresh).sum()) * scale
    a_trans = float((sample.x_trans[0] > thresh).sum()) * scale
    return a_long, a_trans


def _best_threshold_accuracy(values: np.ndarray, labels: np.ndarray, n_classes: int) -> float:
    """Best ordered-threshold classifier accuracy by dynamic programming."""
    order = np.argsort(values, kind="stable")
    y = labels[order]
    n = len(y)
    # prefix[k][i] = count of class k among first i sorted samples
    prefix = np.zeros((n_classes, n + 1), dtype=np.int64)
    for k in range(n_classes):
        prefix[k, 1:] = np.cumsum(y == k)
    # dp[i] = best correct count assigning classes 0..k-1 to the first i samples
    dp = prefix[0, :].astype(np.int64)
    for k in range(1, n_classes):
        ndp = np.full(n + 1, -1, dtype=np.int64)
        best = -1
        best_j = 0
        for i in range(n + 1):
            cand = dp[i] - prefix[k, i]
            if cand > best:
                best = cand
                best_j = i
            ndp[i] = best + prefix[k, i]
        del best_j
        dp = ndp
    return float(dp[n]) / n


def threshold_oracle_accuracy(dataset: Dataset, view: str = "pair") -> float:
    """Resubstitution accuracy of the blob-area threshold classifier.

    view: "pair" uses the geometric mean of both corrected areas (cancels
    the anti-correlated per-view noise); "long"/"trans" use one view.
    """
    stats = []
    for s in dataset.samples:
        a_long, a_trans = blob_area_mm2(s, dataset.spec)
        if view == "pair":
            stats.append(np.sqrt(max(a_long, 1e-12) * max(a_trans, 1e-12)))
        elif view == "long":
            stats.append(a_long)
        elif view == "trans":
            stats.append(a_trans)
        else:
            raise ValueError(f"unknown view {view!r}")
    return _best_threshold_accuracy(np.asarray(stats), dataset.labels(), dataset.spec.n_classes)


def with_class_gap(spec: GenSpec, gap_mm: float) -> GenSpec:
    return replace(spec, class_gap_mm=gap_mm)
