"""Synthetic frame sequences, shift-and-stack cutouts, dataset assembly.

A scene is 32 sky-aligned noisy frames: fixed field stars, optionally one
point source moving at constant velocity, and for source-free scenes a
confuser (a static star or a short transient) at the candidate position.
Stacking shifts frame k by the truncated integer displacement of an assumed
velocity and takes the pixelwise median of consecutive depth-sized groups,
so a matched-velocity source concentrates at one spot in every group at
every depth while fixed stars march and transients vanish.

Datasets are directories: a canonical-JSON manifest plus one tensor file per
sample; writing the same samples twice yields identical bytes.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass

import numpy as np

from .jsonutil import dump_canonical, load_json
from .tensor import read_mdt, write_mdt

_ID_RE = re.compile(r"^[A-Za-z0-9_-]+$")


@dataclass(frozen=True)
class SceneConfig:
    """Knobs for one synthetic observation."""

    frame_size: int = 48
    cutout_size: int = 20
    n_frames: int = 32
    noise_sigma: float = 1.0
    psf_sigma: float = 1.2
    object_peak: tuple[float, float] = (5.0, 10.0)
    speed: tuple[float, float] = (0.05, 0.4)  # px/frame
    n_field_stars: tuple[int, int] = (0, 3)
    star_peak: tuple[float, float] = (3.0, 30.0)
    center_jitter: float = 1.5
    transient_fraction: float = 0.5  # confuser mix for source-free scenes

    def __post_init__(self):
        if self.cutout_size > self.frame_size:
            raise ValueError(f"cutout {self.cutout_size} larger than frame {self.frame_size}")
        if self.n_frames < 1:
            raise ValueError(f"n_frames must be >= 1, got {self.n_frames}")

    def to_dict(self) -> dict:
        return {
            "frame_size": self.frame_size,
            "cutout_size": self.cutout_size,
            "n_frames": self.n_frames,
            "noise_sigma": self.noise_sigma,
            "psf_sigma": self.psf_sigma,
            "object_peak": list(self.object_peak),
            "speed": list(self.speed),
            "n_field_stars": list(self.n_field_stars),
            "star_peak": list(self.star_peak),
            "center_jitter": self.center_jitter,
            "transient_fraction": self.transient_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        fields = {
            "frame_size",
            "cutout_size",
            "n_frames",
            "noise_sigma",
            "psf_sigma",
            "object_peak",
            "speed",
            "n_field_stars",
            "star_peak",
            "center_jitter",
            "transient_fraction",
        }
        extra = set(d) - fields
        if extra:
            raise ValueError(f"unknown scene keys: {sorted(extra)}")
        d = dict(d)
        for key in ("object_peak", "speed", "n_field_stars", "star_peak"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class FrameSequence:
    """Sky-aligned frames plus generation truth."""

    frames: np.ndarray  # (n_frames, H, W) float32
    has_object: bool
    velocity: tuple[float, float] | None  # (vy, vx) px/frame
    start: tuple[float, float]  # candidate position (y, x) in frame 0


def _add_gaussian(img: np.ndarray, y0: float, x0: float, peak: float, sigma: float) -> None:
    h, w = img.shape
    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]
    img += peak * np.exp(-((yy - y0) ** 2 + (xx - x0) ** 2) / (2.0 * sigma * sigma))


def synth_sequence(scene: SceneConfig, rng: np.random.Generator, has_object: bool = True) -> FrameSequence:
    """Render one noisy sequence; error if the source track leaves the frame."""
    n, size = scene.n_frames, scene.frame_size
    frames = rng.normal(0.0, scene.noise_sigma, size=(n, size, size))

    n_stars = int(rng.integers(scene.n_field_stars[0], scene.n_field_stars[1] + 1))
    for _ in range(n_stars):
        sy = rng.uniform(0, size - 1)
        sx = rng.uniform(0, size - 1)
        speak = rng.uniform(*scene.star_peak)
        for k in range(n):
            _add_gaussian(frames[k], sy, sx, speak, scene.psf_sigma)

    half = (size - 1) / 2.0
    j = scene.center_jitter
    start = (half + rng.uniform(-j, j), half + rng.uniform(-j, j))

    velocity: tuple[float, float] | None = None
    if has_object:
        speed = rng.uniform(*scene.speed)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        velocity = (speed * math.sin(angle), speed * math.cos(angle))
        peak = rng.uniform(*scene.object_peak)
        for k in range(n):
            y = start[0] + k * velocity[0]
            x = start[1] + k * velocity[1]
            if not (0.0 <= y <= size - 1 and 0.0 <= x <= size - 1):
                raise ValueError(f"object track exits frame at frame {k}: ({y:.2f}, {x:.2f})")
            _add_gaussian(frames[k], y, x, peak, scene.psf_sigma)
    else:
        peak = rng.uniform(*scene.object_peak)
        if rng.random() < scene.transient_fraction:
            start_frame = int(rng.integers(0, max(1, n - 2)))
            duration = int(rng.integers(1, 4))
            for k in range(start_frame, min(n, start_frame + duration)):
                _add_gaussian(frames[k], start[0], start[1], 3.0 * peak, scene.psf_sigma)
        else:
            for k in range(n):
                _add_gaussian(frames[k], start[0], start[1], peak, scene.psf_sigma)

    return FrameSequence(
        frames=frames.astype(np.float32),
        has_object=has_object,
        velocity=velocity,
        start=start,
    )


def _shift_int(frame: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """out[y, x] = frame[y + dy, x + dx], zero-filled outside the frame."""
    h, w = frame.shape
    out = np.zeros_like(frame)
    y0, y1 = max(0, -dy), min(h, h - dy)
    x0, x1 = max(0, -dx), min(w, w - dx)
    if y0 < y1 and x0 < x1:
        out[y0:y1, x0:x1] = frame[y0 + dy : y1 + dy, x0 + dx : x1 + dx]
    return out


def shift_stack(
    frames: np.ndarray,
    velocity: tuple[float, float],
    depth: int,
    cutout_size: int = 20,
) -> np.ndarray:
    """Median-stack consecutive depth-sized groups along an assumed track.

    Frame k (global index) is shifted by the truncated displacement
    (-trunc(k*vy), -trunc(k*vx)) so a source moving at exactly `velocity`
    lands on the same pixel in every group of every depth. Returns central
    cutouts, shape (n_frames//depth, cutout_size, cutout_size).
    """
    frames = np.asarray(frames)
    if frames.ndim != 3:
        raise ValueError(f"frames must be (n, H, W), got shape {frames.shape}")
    n, h, w = frames.shape
    if depth < 1 or n % depth:
        raise ValueError(f"depth {depth} does not divide frame count {n}")
    if cutout_size > min(h, w):
        raise ValueError(f"cutout {cutout_size} larger than frame {h}x{w}")
    vy, vx = float(velocity[0]), float(velocity[1])
    cy = (h - cutout_size) // 2
    cx = (w - cutout_size) // 2

    aligned = np.empty_like(frames)
    for k in range(n):
        dy = int(np.trunc(k * vy))
        dx = int(np.trunc(k * vx))
        aligned[k] = _shift_int(frames[k], dy, dx)

    groups = n // depth
    out = np.empty((groups, cutout_size, cutout_size), dtype=np.float32)
    for g in range(groups):
        med = np.median(aligned[g * depth : (g + 1) * depth], axis=0)
        out[g] = med[cy : cy + cutout_size, cx : cx + cutout_size]
    return out


def normalize_combo(combo, n_frames: int = 32) -> tuple[int, ...]:
    """Validate a depth combination; canonical order is descending."""
    depths = tuple(int(d) for d in combo)
    if not depths:
        raise ValueError("combo must name at least one depth")
    if len(set(depths)) != len(depths):
        raise ValueError(f"combo has duplicate depths: {depths}")
    for d in depths:
        if d < 1 or n_frames % d:
            raise ValueError(f"depth {d} does not divide frame count {n_frames}")
    return tuple(sorted(depths, reverse=True))


def combo_channels(combo, n_frames: int = 32) -> int:
    """Total stacked channels: sum of n_frames/depth over the combo."""
    return sum(n_frames // d for d in normalize_combo(combo, n_frames))


@dataclass
class MultiDepthSample:
    """One candidate: stacked cutouts from every depth as channels."""

    sample_id: str
    base_id: str
    label: int
    combo: tuple[int, ...]
    channels: np.ndarray  # (C, H, W) float32
    channel_meta: list[tuple[int, int]]  # (depth, group index) per channel


def assemble_sample(
    sample_id: str,
    stacks: dict[int, np.ndarray],
    combo,
    label: int,
    base_id: str | None = None,
    n_frames: int = 32,
) -> MultiDepthSample:
    """Order stacks by descending depth, then group index, into channels."""
    if not _ID_RE.match(sample_id):
        raise ValueError(f"sample id {sample_id!r} must match [A-Za-z0-9_-]+")
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    depths = normalize_combo(combo, n_frames)
    chans: list[np.ndarray] = []
    meta: list[tuple[int, int]] = []
    shape = None
    for d in depths:
        if d not in stacks:
            raise ValueError(f"missing stack for depth {d}")
        arr = np.asarray(stacks[d], dtype=np.float32)
        expect_groups = n_frames // d
        if arr.ndim != 3 or arr.shape[0] != expect_groups:
            raise ValueError(f"depth {d} stack must have {expect_groups} groups, got shape {arr.shape}")
        if shape is None:
            shape = arr.shape[1:]
        elif arr.shape[1:] != shape:
            raise ValueError(f"depth {d} cutout shape {arr.shape[1:]} differs from {shape}")
        for g in range(expect_groups):
            chans.append(arr[g])
            meta.append((d, g))
    return MultiDepthSample(
        sample_id=sample_id,
        base_id=base_id or sample_id,
        label=int(label),
        combo=depths,
        channels=np.stack(chans),
        channel_meta=meta,
    )


AUGMENT_NAMES = ("orig", "rot90", "rot180", "rot270", "hflip", "vflip")


def augment(sample: MultiDepthSample) -> list[MultiDepthSample]:
    """Six orientation variants sharing the sample's base id.

    Order: original, three rotations, horizontal flip, vertical flip. Every
    transform permutes pixels within each channel; no values change.
    """
    c = sample.channels
    variants = [
        c.copy(),
        np.rot90(c, 1, axes=(1, 2)).copy(),
        np.rot90(c, 2, axes=(1, 2)).copy(),
        np.rot90(c, 3, axes=(1, 2)).copy(),
        np.flip(c, axis=2).copy(),
        np.flip(c, axis=1).copy(),
    ]
    out = []
    for name, arr in zip(AUGMENT_NAMES, variants):
        out.append(
            MultiDepthSample(
                sample_id=f"{sample.sample_id}-{name}",
                base_id=sample.base_id,
                label=sample.label,
                combo=sample.combo,
                channels=np.ascontiguousarray(arr),
                channel_meta=list(sample.channel_meta),
            )
        )
    return out


def permute_channels(sample: MultiDepthSample, rng: np.random.Generator) -> MultiDepthSample:
    """Shuffle channel order; the per-channel depth labels move along."""
    perm = rng.permutation(sample.channels.shape[0])
    return MultiDepthSample(
        sample_id=sample.sample_id,
        base_id=sample.base_id,
        label=sample.label,
        combo=sample.combo,
        channels=np.ascontiguousarray(sample.channels[perm]),
        channel_meta=[sample.channel_meta[i] for i in perm],
    )


def standardize(samples: list[MultiDepthSample]) -> tuple[list[MultiDepthSample], dict]:
    """Shift/scale all pixels to global mean 0, variance 1.

    Returns the statistics so evaluation data can reuse them.
    """
    if not samples:
        raise ValueError("cannot standardize an empty dataset")
    total = 0
    s1 = 0.0
    s2 = 0.0
    for s in samples:
        a = s.channels.astype(np.float64)
        total += a.size
        s1 += a.sum()
        s2 += (a * a).sum()
    mean = s1 / total
    var = s2 / total - mean * mean
    if var <= 0:
        raise ValueError("dataset is constant; standardization undefined")
    std = math.sqrt(var)
    stats = {"mean": float(mean), "std": float(std)}
    return apply_standardization(samples, stats), stats


def apply_standardization(samples: list[MultiDepthSample], stats: dict) -> list[MultiDepthSample]:
    mean, std = float(stats["mean"]), float(stats["std"])
    if std <= 0:
        raise ValueError(f"standardization std must be positive, got {std}")
    out = []
    for s in samples:
        out.append(replace_channels(s, ((s.channels - mean) / std).astype(np.float32)))
    return out


def replace_channels(sample: MultiDepthSample, channels: np.ndarray) -> MultiDepthSample:
    return MultiDepthSample(
        sample_id=sample.sample_id,
        base_id=sample.base_id,
        label=sample.label,
        combo=sample.combo,
        channels=channels,
        channel_meta=list(sample.channel_meta),
    )


@dataclass
class DatasetSplit:
    """Disjoint train/val/test parts; a base id never straddles parts."""

    train: list[MultiDepthSample]
    val: list[MultiDepthSample]
    test: list[MultiDepthSample]
    assignment: dict[str, str]  # base_id -> part name


def split(
    samples: list[MultiDepthSample],
    seed: int,
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
) -> DatasetSplit:
    """Grouped split: floor-allocate val/test on base ids, remainder trains."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    base_ids = sorted({s.base_id for s in samples})
    if not base_ids:
        raise ValueError("cannot split an empty dataset")
    order = np.random.default_rng([int(seed), 11]).permutation(len(base_ids))
    shuffled = [base_ids[i] for i in order]
    n = len(shuffled)
    n_val = int(n * fractions[1])
    n_test = int(n * fractions[2])
    n_train = n - n_val - n_test
    assignment: dict[str, str] = {}
    for i, bid in enumerate(shuffled):
        if i < n_train:
            assignment[bid] = "train"
        elif i < n_train + n_val:
            assignment[bid] = "val"
        else:
            assignment[bid] = "test"
    parts: dict[str, list[MultiDepthSample]] = {"train": [], "val": [], "test": []}
    for s in samples:
        parts[assignment[s.base_id]].append(s)
    return DatasetSplit(train=parts["train"], val=parts["val"], test=parts["test"], assignment=assignment)


# ---------------------------------------------------------------------------
# sample factories
# ---------------------------------------------------------------------------


def make_sample(
    index: int,
    label: int,
    combo,
    scene: SceneConfig,
    seed: int,
) -> MultiDepthSample:
    """Deterministic sample: substream keyed by (seed, index)."""
    depths = normalize_combo(combo, scene.n_frames)
    rng = np.random.default_rng([int(seed), int(index)])
    seq = synth_sequence(scene, rng, has_object=bool(label))
    if seq.velocity is not None:
        assumed = seq.velocity
    else:
        speed = rng.uniform(*scene.speed)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        assumed = (speed * math.sin(angle), speed * math.cos(angle))
    stacks = {d: shift_stack(seq.frames, assumed, d, scene.cutout_size) for d in depths}
    return assemble_sample(f"s{index:06d}", stacks, depths, label, n_frames=scene.n_frames)


def generate_dataset(
    n_samples: int,
    positive_fraction: float,
    combo,
    scene: SceneConfig,
    seed: int,
) -> list[MultiDepthSample]:
    """n_samples candidates with an exact (rounded) positive count."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if not 0.0 <= positive_fraction <= 1.0:
        raise ValueError(f"positive_fraction must be in [0,1], got {positive_fraction}")
    n_pos = int(round(n_samples * positive_fraction))
    labels = np.zeros(n_samples, dtype=np.int64)
    labels[:n_pos] = 1
    order = np.random.default_rng([int(seed), 5]).permutation(n_samples)
    labels = labels[order]
    return [make_sample(i, int(labels[i]), combo, scene, seed) for i in range(n_samples)]


# ---------------------------------------------------------------------------
# dataset directory format
# ---------------------------------------------------------------------------


def write_dataset(samples: list[MultiDepthSample], dirpath, stats: dict | None = None) -> None:
    """Write manifest.json plus tensors/<id>.mdt; byte-stable across runs."""
    if not samples:
        raise ValueError("refusing to write an empty dataset")
    combo = samples[0].combo
    os.makedirs(os.path.join(dirpath, "tensors"), exist_ok=True)
    entries = []
    seen: set[str] = set()
    for s in samples:
        if s.sample_id in seen:
            raise ValueError(f"duplicate sample id {s.sample_id!r}")
        seen.add(s.sample_id)
        if s.combo != combo:
            raise ValueError(f"sample {s.sample_id} combo {s.combo} differs from dataset combo {combo}")
        rel = f"tensors/{s.sample_id}.mdt"
        write_mdt(os.path.join(dirpath, rel), s.channels)
        entries.append(
            {
                "id": s.sample_id,
                "base_id": s.base_id,
                "label": s.label,
                "channels": int(s.channels.shape[0]),
                "channel_meta": [[d, g] for d, g in s.channel_meta],
                "tensor": rel,
            }
        )
    manifest = {
        "format": "stack-dataset-v1",
        "combo": list(combo),
        "standardization": stats,
        "samples": entries,
    }
    dump_canonical(manifest, os.path.join(dirpath, "manifest.json"))


def read_dataset(dirpath) -> tuple[list[MultiDepthSample], dict | None, tuple[int, ...]]:
    """Load a dataset directory, validating every tensor against the manifest."""
    manifest = load_json(os.path.join(dirpath, "manifest.json"))
    if manifest.get("format") != "stack-dataset-v1":
        raise ValueError(f"{dirpath}: unknown dataset format {manifest.get('format')!r}")
    combo = tuple(int(d) for d in manifest["combo"])
    samples = []
    for e in manifest["samples"]:
        arr = read_mdt(os.path.join(dirpath, e["tensor"]))
        meta = [(int(d), int(g)) for d, g in e["channel_meta"]]
        if arr.ndim != 3:
            raise ValueError(f"sample {e['id']}: tensor rank {arr.ndim}, expected 3")
        if arr.shape[0] != e["channels"] or len(meta) != arr.shape[0]:
            raise ValueError(
                f"sample {e['id']}: channel count mismatch (manifest {e['channels']}, "
                f"meta {len(meta)}, tensor {arr.shape[0]})"
            )
        if e["label"] not in (0, 1):
            raise ValueError(f"sample {e['id']}: label {e['label']} not in {{0,1}}")
        samples.append(
            MultiDepthSample(
                sample_id=e["id"],
                base_id=e["base_id"],
                label=int(e["label"]),
                combo=combo,
                channels=arr,
                channel_meta=meta,
            )
        )
    return samples, manifest.get("standardization"), combo
