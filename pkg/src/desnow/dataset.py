"""Procedural snowy-sample factory.

Base masks are oversized single-channel layers of soft particles. A particle
is a disc with Gaussian falloff, optionally motion-smeared along a random
angle (a capsule), with per-particle radius, streak length and peak opacity.
Particles are placed by dart throwing with rejection so footprints never
touch; a connected blob in a finished mask therefore never exceeds one
particle's footprint, which keeps the per-category width bounds meaningful.

Sample synthesis follows the subset rules: the ``s`` subset overlays one
small-category mask, ``m`` adds a medium mask, ``l`` adds a large one.
Each mask is cropped at a random offset to the clean image's size, crops are
merged with an elementwise max, the snow color is a constant map at a random
brightness in [0.7*max(y), max(y)] (optionally jittered per channel), and
the snowy image is composed as ``a*z + y*(1-z)``.

On disk a dataset is: x and y as 8-bit PNGs, z and a as float ``.dsnt``
dumps, plus a tab-separated manifest (x, y, z, a paths and the per-sample
seed). Clean sources are resized so their largest side is at most 640 px.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import serialize
from .rng import stream
from .snow import SnowTriplet, compose
from .tensor import Tensor

MAX_CLEAN_SIDE = 640
MASK_MARGIN_SCALE = 1.5  # rendered base masks exceed the image by this factor
PLACEMENT_GAP = 2.0  # px between particle footprints, keeps blobs separate
PLACEMENT_ATTEMPTS = 40

OPACITY_RANGE = (0.3, 1.0)

# radius ranges are the category definition; densities are particles per px^2
CATEGORY_PARAMS = {
    "small": dict(radius=(1.0, 3.0), streak=(0.0, 4.0), density=(4e-3, 9e-3)),
    "medium": dict(radius=(4.0, 8.0), streak=(0.0, 8.0), density=(6e-4, 1.2e-3)),
    "large": dict(radius=(9.0, 16.0), streak=(0.0, 12.0), density=(8e-5, 1.8e-4)),
}

SUBSET_CATEGORIES = {
    "s": ("small",),
    "m": ("small", "medium"),
    "l": ("small", "medium", "large"),
}


@dataclass
class BaseMask:
    z: np.ndarray  # (1, P, Q) in [0, 1]
    category: str
    count: int  # particles actually placed
    radius_range: tuple
    streak_range: tuple
    opacity_range: tuple


@dataclass(frozen=True)
class SynthConfig:
    subset: str
    seed: int = 0
    brightness_low_factor: float = 0.7
    crop_policy: str = "uniform"
    jitter: float = 0.0  # per-channel snow color jitter amplitude

    def __post_init__(self):
        if self.subset.lower() not in SUBSET_CATEGORIES:
            raise ValueError(f"unknown subset {self.subset!r}, expected s, m or l")
        if not (0.0 < self.brightness_low_factor <= 1.0):
            raise ValueError("brightness_low_factor must be in (0, 1]")
        if self.crop_policy != "uniform":
            raise ValueError(f"unsupported crop policy {self.crop_policy!r}")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")

    @property
    def categories(self) -> tuple:
        return SUBSET_CATEGORIES[self.subset.lower()]


def component_width_bound(category: str) -> int:
    """Widest blob (in px) a single particle of this category can light up."""
    p = CATEGORY_PARAMS[category]
    return int(2 * p["radius"][1] + p["streak"][1]) + 1


def _draw_capsule(z: np.ndarray, cy: float, cx: float, r: float, length: float, angle: float, peak: float):
    """Max-blend one soft particle into the mask plane ``z`` (P, Q)."""
    P, Q = z.shape
    half = length / 2.0
    uy, ux = math.sin(angle), math.cos(angle)
    e = int(math.ceil(r + half)) + 1
    y0, y1 = max(0, int(cy) - e), min(P, int(cy) + e + 1)
    x0, x1 = max(0, int(cx) - e), min(Q, int(cx) + e + 1)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    vy = yy - (cy - half * uy)
    vx = xx - (cx - half * ux)
    if length > 0:
        t = np.clip((vy * uy + vx * ux) / length, 0.0, 1.0)
    else:
        t = 0.0
    dy = vy - t * length * uy
    dx = vx - t * length * ux
    d2 = dy * dy + dx * dx
    sigma2 = (r / 2.0) ** 2
    edge = math.exp(-2.0)  # profile value at d == r before renormalization
    prof = (np.exp(-d2 / (2.0 * sigma2)) - edge) / (1.0 - edge)
    prof = np.where(d2 <= r * r, np.maximum(prof, 0.0) * peak, 0.0)
    np.maximum(z[y0:y1, x0:x1], prof.astype(z.dtype), out=z[y0:y1, x0:x1])


def render_base_mask(category: str, seed: int, size: "tuple[int, int]" = (256, 256), count: "int | None" = None) -> BaseMask:
    """Render one oversized particle layer.

    ``count`` overrides the density-derived particle budget (0 gives an empty
    mask). Placement is rejection-sampled; particles that cannot be placed
    without touching an existing footprint are dropped, so the budget is an
    upper bound.
    """
    if category not in CATEGORY_PARAMS:
        raise ValueError(f"unknown category {category!r}")
    params = CATEGORY_PARAMS[category]
    P, Q = int(size[0]), int(size[1])
    rng = stream(seed, f"base-mask:{category}")
    if count is None:
        density = rng.uniform(*params["density"])
        count = int(round(density * P * Q))
    z = np.zeros((P, Q), dtype=np.float32)
    placed_y = np.empty(count)
    placed_x = np.empty(count)
    placed_f = np.empty(count)
    placed = 0
    for _ in range(count):
        r = rng.uniform(*params["radius"])
        length = rng.uniform(*params["streak"])
        angle = rng.uniform(0.0, math.pi)
        peak = rng.uniform(*OPACITY_RANGE)
        foot = r + length / 2.0
        for _ in range(PLACEMENT_ATTEMPTS):
            cy = rng.uniform(0, P)
            cx = rng.uniform(0, Q)
            if placed:
                dy = placed_y[:placed] - cy
                dx = placed_x[:placed] - cx
                if np.any(np.hypot(dy, dx) <= placed_f[:placed] + foot + PLACEMENT_GAP):
                    continue
            _draw_capsule(z, cy, cx, r, length, angle, peak)
            placed_y[placed] = cy
            placed_x[placed] = cx
            placed_f[placed] = foot
            placed += 1
            break
    return BaseMask(
        z=z[None],
        category=category,
        count=placed,
        radius_range=params["radius"],
        streak_range=params["streak"],
        opacity_range=OPACITY_RANGE,
    )


def synthesize_sample(y: np.ndarray, cfg: SynthConfig, masks: "list[BaseMask]") -> SnowTriplet:
    """Crop the given base masks onto a clean image and compose the triplet."""
    y = np.asarray(y, dtype=np.float32)
    if y.ndim != 3 or y.shape[0] != 3:
        raise ValueError(f"clean image must be (3, H, W), got {y.shape}")
    H, W = y.shape[1:]
    rng = stream(cfg.seed, "synthesize")
    z = np.zeros((1, H, W), dtype=np.float32)
    for bm in masks:
        P, Q = bm.z.shape[1:]
        if P < H or Q < W:
            raise ValueError(f"base mask {P}x{Q} smaller than image {H}x{W}")
        oy = int(rng.integers(0, P - H + 1))
        ox = int(rng.integers(0, Q - W + 1))
        np.maximum(z, bm.z[:, oy : oy + H, ox : ox + W], out=z)
    ymax = float(y.max())
    b = float(rng.uniform(cfg.brightness_low_factor * ymax, ymax))
    color = np.full(3, b, dtype=np.float32)
    if cfg.jitter > 0:
        color = np.clip(color + rng.uniform(-cfg.jitter, cfg.jitter, size=3), 0.0, 1.0)
    a = np.broadcast_to(color.astype(np.float32)[:, None, None], (3, H, W)).copy()
    x = compose(Tensor(y), Tensor(z), Tensor(a)).data
    return SnowTriplet(x=x, y=y, z=z, a=a)


# -- image and manifest I/O ----------------------------------------------------


def save_png(path, img: np.ndarray):
    """Write a (3,H,W) or (1,H,W) unit-range image as an 8-bit PNG."""
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError(f"expected (1|3, H, W) image, got {arr.shape}")
    if arr.shape[0] == 1:
        Image.fromarray(arr[0], mode="L").save(path)
    else:
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    """Read any PIL-readable image to (C,H,W) float32 in [0,1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return (arr.astype(np.float32)) / 255.0


def load_clean_image(path, max_side: int = MAX_CLEAN_SIDE) -> np.ndarray:
    """Load an RGB image, downscaling so the largest side is <= max_side.
    Values land on the 8-bit grid, which makes recomposition checks exact."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        w, h = im.size
        m = max(w, h)
        if m > max_side:
            scale = max_side / m
            im = im.resize((max(1, round(w * scale)), max(1, round(h * scale))), Image.LANCZOS)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


@dataclass
class SampleRecord:
    x_path: Path
    y_path: Path
    z_path: Path
    a_path: Path
    seed: int


def build_dataset(clean_dir, out_dir, subset: str, count: int, seed: int, jitter: float = 0.0) -> Path:
    """Generate ``count`` samples and return the manifest path."""
    clean_dir, out_dir = Path(clean_dir), Path(out_dir)
    exts = {".png", ".jpg", ".jpeg", ".bmp"}
    sources = sorted(p for p in clean_dir.iterdir() if p.suffix.lower() in exts)
    if not sources:
        raise ValueError(f"no clean images found in {clean_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    images = [load_clean_image(p) for p in sources]
    cats = SUBSET_CATEGORIES[subset.lower()]

    lines = []
    for i in range(count):
        sample_seed = int(stream(seed, "sample-seed", i).integers(0, 2**31 - 1))
        pick = stream(sample_seed, "pick")
        y = images[int(pick.integers(0, len(images)))]
        H, W = y.shape[1:]
        size = (int(H * MASK_MARGIN_SCALE) + 1, int(W * MASK_MARGIN_SCALE) + 1)
        masks = [render_base_mask(cat, sample_seed, size=size) for cat in cats]
        cfg = SynthConfig(subset=subset, seed=sample_seed, jitter=jitter)
        trip = synthesize_sample(y, cfg, masks)
        names = [f"{i:05d}_x.png", f"{i:05d}_y.png", f"{i:05d}_z.dsnt", f"{i:05d}_a.dsnt"]
        save_png(out_dir / names[0], trip.x)
        save_png(out_dir / names[1], trip.y)
        serialize.save_dsnt(out_dir / names[2], trip.z)
        serialize.save_dsnt(out_dir / names[3], trip.a)
        lines.append("\t".join(names + [str(sample_seed)]))

    manifest = out_dir / "manifest.tsv"
    with open(manifest, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")
    return manifest


def load_manifest(manifest_path) -> "list[SampleRecord]":
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    records = []
    with open(manifest_path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            xp, yp, zp, ap, s = line.split("\t")
            records.append(
                SampleRecord(base / xp, base / yp, base / zp, base / ap, int(s))
            )
    return records


def load_triplet(rec: SampleRecord) -> SnowTriplet:
    return SnowTriplet(
        x=load_image(rec.x_path),
        y=load_image(rec.y_path),
        z=serialize.load_dsnt(rec.z_path),
        a=serialize.load_dsnt(rec.a_path),
    )
