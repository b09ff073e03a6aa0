"""Synthetic one-shot counting scenes with category-disjoint splits.

Each scene holds N instances of a target shape plus distractor shapes of other
categories. Instances get random rotation, 0.5x-1.5x size jitter and color
jitter, never overlap, and are rendered with 4x4 supersampled coverage. The
support box tightly encloses one target instance.

On disk a sample is ``<id>.tnsr`` (the 3xHxW image) and ``<id>.json``
(``{"category", "box": [x0, y0, x1, y1], "points": [[x, y], ...]}``); a
corpus adds ``manifest.json`` listing sample ids per split and the split
categories.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .features import SupportBox
from .imaging import resize_bilinear
from .numcore import Rng, tnsr


class GenerationError(RuntimeError):
    pass


class SampleFormatError(ValueError):
    pass


class SplitError(ValueError):
    pass


# --- shape catalog: membership tests in a unit-radius local frame ----------

def _square(u, v):
    return (np.abs(u) <= 0.7) & (np.abs(v) <= 0.7)


def _circle(u, v):
    return u * u + v * v <= 0.85 ** 2


def _triangle(u, v):
    # equilateral, circumradius 1, apex up
    inside = np.ones(np.shape(u), dtype=bool)
    for k in range(3):
        a = math.pi / 2 + k * 2 * math.pi / 3 + math.pi
        inside &= u * math.cos(a) + v * math.sin(a) <= 0.5
    return inside


def _ring(u, v):
    r2 = u * u + v * v
    return (r2 <= 0.95 ** 2) & (r2 >= 0.5 ** 2)


def _star(u, v):
    r = np.hypot(u, v)
    theta = np.mod(np.arctan2(v, u), 2 * math.pi / 5) / (2 * math.pi / 5)
    edge = 0.42 + (1.0 - 0.42) * np.abs(1.0 - 2.0 * theta)
    return r <= edge


def _cross(u, v):
    au, av = np.abs(u), np.abs(v)
    return ((au <= 0.3) & (av <= 0.95)) | ((av <= 0.3) & (au <= 0.95))


def _hexagon(u, v):
    inside = np.ones(np.shape(u), dtype=bool)
    for k in range(6):
        a = k * math.pi / 3
        inside &= u * math.cos(a) + v * math.sin(a) <= 0.82
    return inside


SHAPES: dict[str, Callable] = {
    "square": _square,
    "circle": _circle,
    "triangle": _triangle,
    "ring": _ring,
    "star": _star,
    "cross": _cross,
    "hexagon": _hexagon,
}

DEFAULT_SPLITS = {
    "train": ("square", "circle", "triangle", "ring"),
    "val": ("star",),
    "test": ("cross",),
}


@dataclass
class SceneSpec:
    image_size: int = 64
    categories: tuple[str, ...] = ("square",)
    distractor_pool: tuple[str, ...] = ()
    count_range: tuple[int, int] = (1, 16)
    distractor_range: tuple[int, int] = (0, 6)
    base_radius: float = 4.0
    size_jitter: tuple[float, float] = (0.5, 1.5)
    rotation: bool = True
    color_jitter: float = 0.08
    noise: float = 0.03
    background: tuple[float, float] = (0.0, 0.3)
    fixed_color: tuple[float, float, float] | None = None
    supersample: int = 4
    margin: float = 1.0
    max_attempts: int = 1000


@dataclass
class CountingSample:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    box: SupportBox
    points: np.ndarray  # (N, 2) float64, (x, y) pixel coords
    category: str
    sample_id: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)

    @property
    def count(self) -> int:
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, CountingSample):
            return NotImplemented
        return (self.category == other.category and self.box == other.box
                and self.image.shape == other.image.shape and np.array_equal(self.image, other.image)
                and np.array_equal(self.points, other.points))


def _random_color(rng: Rng) -> np.ndarray:
    # saturated, reasonably bright colours so instances stand off the background
    c = rng.uniform(0.0, 1.0, size=3)
    c[rng.integers(0, 3)] = rng.uniform(0.75, 1.0)
    return c


def _render_alpha(shape_fn, cx, cy, radius, angle, size, ss) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    """Coverage of one instance on the pixel grid, restricted to its bounding window."""
    x0 = max(0, int(math.floor(cx - radius - 1)))
    y0 = max(0, int(math.floor(cy - radius - 1)))
    x1 = min(size, int(math.ceil(cx + radius + 1)))
    y1 = min(size, int(math.ceil(cy + radius + 1)))
    offs = (np.arange(ss) + 0.5) / ss
    xs = (np.arange(x0, x1)[:, None] + offs[None, :]).reshape(-1)
    ys = (np.arange(y0, y1)[:, None] + offs[None, :]).reshape(-1)
    gx, gy = np.meshgrid(xs - cx, ys - cy)
    ca, sa = math.cos(angle), math.sin(angle)
    u = (ca * gx + sa * gy) / radius
    v = (-sa * gx + ca * gy) / radius
    inside = shape_fn(u, v).astype(np.float64)
    alpha = inside.reshape(y1 - y0, ss, x1 - x0, ss).mean(axis=(1, 3))
    return alpha, (x0, y0, x1, y1)


def generate_scene(spec: SceneSpec, rng: Rng, category: str | None = None, sample_id: str = "") -> CountingSample:
    lo, hi = spec.count_range
    if lo < 1 or hi < lo:
        raise GenerationError(f"invalid count range {spec.count_range} in {spec}")
    size = spec.image_size
    if category is None:
        category = rng.choice(list(spec.categories))
    n_target = rng.integers(lo, hi + 1)
    pool = [c for c in spec.distractor_pool if c != category]
    n_distract = rng.integers(spec.distractor_range[0], spec.distractor_range[1] + 1) if pool else 0
    distract_cats = []
    if n_distract:
        n_kinds = min(len(pool), rng.integers(1, 3))
        kinds = [pool[i] for i in rng.permutation(len(pool))[:n_kinds]]
        distract_cats = [kinds[rng.integers(0, n_kinds)] for _ in range(n_distract)]

    # one base colour per category present
    colors = {}
    for cat in [category] + sorted(set(distract_cats)):
        colors[cat] = np.asarray(spec.fixed_color, dtype=np.float64) if spec.fixed_color is not None else _random_color(rng)
    bg_level = rng.uniform(*spec.background)

    cats = [category] * n_target + distract_cats
    radii = [spec.base_radius * rng.uniform(*spec.size_jitter) for _ in cats]
    placed: list[tuple[float, float, float]] = []
    instances = []
    # largest first: rejection sampling packs far better that way
    for i in sorted(range(len(cats)), key=lambda i: -radii[i]):
        cat, radius = cats[i], radii[i]
        for _ in range(spec.max_attempts):
            cx = rng.uniform(radius, size - radius)
            cy = rng.uniform(radius, size - radius)
            if all((cx - px) ** 2 + (cy - py) ** 2 >= (radius + pr + spec.margin) ** 2 for px, py, pr in placed):
                break
        else:
            raise GenerationError(f"could not place a {cat} instance after {spec.max_attempts} attempts; spec={spec}")
        placed.append((cx, cy, radius))
        angle = rng.uniform(0.0, 2 * math.pi) if spec.rotation else 0.0
        jitter = rng.uniform(-spec.color_jitter, spec.color_jitter, size=3) if spec.color_jitter else np.zeros(3)
        color = np.clip(colors[cat] + jitter, 0.0, 1.0)
        instances.append((cat, cx, cy, radius, angle, color))

    image = np.full((3, size, size), bg_level, dtype=np.float64)
    if spec.noise > 0:
        image += spec.noise * rng.normal((3, size, size))
    target_boxes = []
    points = []
    for cat, cx, cy, radius, angle, color in instances:
        alpha, (x0, y0, x1, y1) = _render_alpha(SHAPES[cat], cx, cy, radius, angle, size, spec.supersample)
        region = image[:, y0:y1, x0:x1]
        image[:, y0:y1, x0:x1] = region * (1.0 - alpha) + color[:, None, None] * alpha
        if cat == category:
            rows = np.nonzero(alpha.max(axis=1) > 0)[0]
            cols = np.nonzero(alpha.max(axis=0) > 0)[0]
            target_boxes.append(SupportBox(x0 + int(cols[0]), y0 + int(rows[0]), x0 + int(cols[-1]) + 1, y0 + int(rows[-1]) + 1))
            points.append((cx, cy))
    box = target_boxes[rng.integers(0, len(target_boxes))]
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return CountingSample(image, box, np.asarray(points), category, sample_id)


# --- augmentation -----------------------------------------------------------

def flip_horizontal(sample: CountingSample) -> CountingSample:
    w = sample.image.shape[2]
    pts = sample.points.copy()
    pts[:, 0] = w - pts[:, 0]
    b = sample.box
    return CountingSample(sample.image[:, :, ::-1].copy(), SupportBox(w - b.x1, b.y0, w - b.x0, b.y1),
                          pts, sample.category, sample.sample_id)


def rescale(sample: CountingSample, factor: float, multiple: int = 8) -> CountingSample:
    """Resize by ``factor`` with output dims snapped to ``multiple``; points and box follow."""
    _, h, w = sample.image.shape
    nh = max(multiple, int(round(h * factor / multiple)) * multiple)
    nw = max(multiple, int(round(w * factor / multiple)) * multiple)
    if (nh, nw) == (h, w):
        return sample
    ry, rx = nh / h, nw / w
    image = resize_bilinear(sample.image, nh, nw).astype(np.float32)
    pts = sample.points * np.array([rx, ry])
    b = sample.box
    box = SupportBox(int(math.floor(b.x0 * rx)), int(math.floor(b.y0 * ry)),
                     min(nw, int(math.ceil(b.x1 * rx))), min(nh, int(math.ceil(b.y1 * ry))))
    return CountingSample(image, box, pts, sample.category, sample.sample_id)


def augment(sample: CountingSample, rng: Rng, flip: bool | None = None, scale: float | None = None,
            scale_range: tuple[float, float] = (0.8, 1.25), multiple: int = 8, min_box: int = 2) -> CountingSample:
    """Random horizontal flip (p=0.5) and uniform rescale; explicit ``flip``/``scale`` override the draws."""
    do_flip = rng.bernoulli(0.5) if flip is None else flip
    out = flip_horizontal(sample) if do_flip else sample
    if scale is not None:
        return rescale(out, scale, multiple)
    for _ in range(100):
        scaled = rescale(out, rng.uniform(*scale_range), multiple)
        b = scaled.box
        if b.x1 - b.x0 >= min_box and b.y1 - b.y0 >= min_box:
            return scaled
    return out


# --- sample files -----------------------------------------------------------

def write_sample(path, sample: CountingSample) -> None:
    """Write ``<path>.tnsr`` and ``<path>.json``; ``path`` has no suffix."""
    base = Path(path)
    tnsr.save(base.with_suffix(".tnsr"), sample.image)
    doc = {"category": sample.category, "box": sample.box.as_list(),
           "points": [[float(x), float(y)] for x, y in sample.points]}
    base.with_suffix(".json").write_text(json.dumps(doc))


def parse_annotation(text: str, source: str = "<annotation>") -> tuple[str, SupportBox, np.ndarray]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SampleFormatError(f"{source}: malformed JSON at byte offset {exc.pos}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise SampleFormatError(f"{source}: expected a JSON object at byte offset 0")
    for key in ("category", "box", "points"):
        if key not in doc:
            raise SampleFormatError(f"{source}: missing key {key!r}")
    box = doc["box"]
    if not (isinstance(box, list) and len(box) == 4):
        raise SampleFormatError(f"{source}: 'box' must be [x0, y0, x1, y1]")
    points = np.asarray(doc["points"], dtype=np.float64).reshape(-1, 2)
    return str(doc["category"]), SupportBox(*(int(v) for v in box)), points


def read_sample(path) -> CountingSample:
    base = Path(path)
    try:
        image = tnsr.load(base.with_suffix(".tnsr"))
    except tnsr.FormatError as exc:
        raise SampleFormatError(f"{base.with_suffix('.tnsr')}: {exc}") from exc
    json_path = base.with_suffix(".json")
    category, box, points = parse_annotation(json_path.read_text(), str(json_path))
    return CountingSample(image, box, points, category, base.name)


# --- corpus -----------------------------------------------------------------

@dataclass
class CorpusConfig:
    sizes: dict[str, int] = field(default_factory=lambda: {"train": 500, "val": 100, "test": 100})
    categories: dict[str, tuple[str, ...]] = field(default_factory=lambda: dict(DEFAULT_SPLITS))
    seed: int = 0
    scene: SceneSpec = field(default_factory=SceneSpec)

    def to_dict(self) -> dict:
        return {"sizes": dict(self.sizes), "categories": {k: list(v) for k, v in self.categories.items()},
                "seed": self.seed, "scene": asdict(self.scene)}


SPLIT_ORDER = ("train", "val", "test")


def check_disjoint(categories: dict[str, tuple[str, ...] | list[str]]) -> None:
    names = list(categories)
    for i, a in enumerate(names):
        if not categories[a]:
            raise SplitError(f"split {a!r} has no categories")
        for b in names[i + 1 :]:
            overlap = set(categories[a]) & set(categories[b])
            if overlap:
                raise SplitError(f"splits {a!r} and {b!r} share categories {sorted(overlap)}")


def split_spec(cfg: CorpusConfig, split: str) -> SceneSpec:
    """Scene spec for one split: its own target categories; distractors come from the train categories."""
    d = asdict(cfg.scene)
    d["categories"] = tuple(cfg.categories[split])
    d["distractor_pool"] = tuple(cfg.categories["train"])
    return SceneSpec(**d)


def generate_split(cfg: CorpusConfig, split: str, n: int | None = None) -> list[CountingSample]:
    check_disjoint(cfg.categories)
    spec = split_spec(cfg, split)
    n = cfg.sizes[split] if n is None else n
    root = Rng(cfg.seed).derive(SPLIT_ORDER.index(split) + 1)
    return [generate_scene(spec, root.derive(i), sample_id=f"{split}_{i:05d}") for i in range(n)]


def build_corpus(out_dir, cfg: CorpusConfig | None = None) -> dict:
    cfg = cfg or CorpusConfig()
    check_disjoint(cfg.categories)
    out = Path(out_dir)
    manifest: dict = {"categories": {k: list(v) for k, v in cfg.categories.items()}, "config": cfg.to_dict()}
    for split in SPLIT_ORDER:
        if split not in cfg.sizes:
            continue
        (out / split).mkdir(parents=True, exist_ok=True)
        ids = []
        for sample in generate_split(cfg, split):
            write_sample(out / split / sample.sample_id, sample)
            ids.append(sample.sample_id)
        manifest[split] = ids
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def load_manifest(corpus_dir) -> dict:
    path = Path(corpus_dir) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SampleFormatError(f"{path}: malformed JSON at byte offset {exc.pos}: {exc.msg}") from exc
    if "categories" not in manifest:
        raise SampleFormatError(f"{path}: missing key 'categories'")
    check_disjoint(manifest["categories"])
    return manifest


def load_split(corpus_dir, split: str) -> list[CountingSample]:
    manifest = load_manifest(corpus_dir)
    if split not in manifest:
        raise SplitError(f"corpus has no split {split!r}")
    allowed = set(manifest["categories"][split])
    samples = []
    for sid in manifest[split]:
        s = read_sample(Path(corpus_dir) / split / sid)
        if s.category not in allowed:
            raise SplitError(f"sample {sid} has category {s.category!r}, not in split {split!r} categories {sorted(allowed)}")
        samples.append(s)
    return samples
