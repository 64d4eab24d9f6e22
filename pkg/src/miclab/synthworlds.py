"""Procedural two-domain scene benchmark with a context-only class pair.

Segmentation scenes (32x32 by default) contain six classes:

====  ==============  ====================================================
id    role            appearance
====  ==============  ====================================================
0     background      mid gray everywhere
1     region-A        warm color on the source domain
2     region-B        cool color on the source domain
3     stripe          bright thin bar, always edge-adjacent to region-A
4     blob            yellow box, always edge-adjacent to region-B
5     distractor      green rectangle, distinct in both domains
====  ==============  ====================================================

The layout rule is absolute: every region-A rectangle touches a stripe
along one full side and keeps clear of the blob; every region-B touches
the blob along at least a two-cell edge and is never adjacent to any
stripe.  On the target domain (when ``ambiguous`` is set) regions A and
B share one merged color distribution, so nothing in their interior
pixels can tell them apart; the landmark adjacencies are the only
evidence.  Both landmarks are positive cues on purpose: a rule coded by
the absence of a neighbour cannot be read from a partially hidden view.
The domain shift adds a global tint and extra pixel noise on top of the
merge, so source-trained models degrade without collapsing.

Classification scenes hold one dominant object of four classes: classes
0 and 1 are both circles (distinguished on the target domain only by a
small corner marker that class 0 carries), classes 2 and 3 are a square
and a diamond.

Datasets are written one directory per split: a flat binary array file
for images and one for labels (small self-describing header: magic,
version, dtype, shape), plus a JSON manifest listing every sample and
the generating spec.  Target train labels are written to a sealed
sidecar that ordinary loading never exposes; only evaluation and the
supervised-comparison trainer may unseal it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .rng import sample_stream

__all__ = ["SceneSpec", "Sample", "SplitData", "generate_scene",
           "generate_dataset", "generate_cls_dataset", "write_benchmark",
           "load_split", "load_dataset", "write_array", "read_array",
           "PRESETS", "SPLIT_OFFSETS", "DEFAULT_COUNTS", "DEFAULT_CLS_COUNTS"]

ARRAY_MAGIC = b"MLABARR1"
_DTYPES = {1: np.float64, 2: np.int64}
_DTYPE_CODES = {np.dtype(np.float64): 1, np.dtype(np.int64): 2}

# disjoint per-split index ranges: sample i of a split draws from the
# stream keyed by (seed, offset + i), so splits never share randomness
SPLIT_OFFSETS = {
    "source/train": 0,
    "source/val": 1_000_000,
    "target/train": 2_000_000,
    "target/val": 3_000_000,
    "target/test": 4_000_000,
}

DEFAULT_COUNTS = {"source/train": 500, "source/val": 64, "target/train": 500,
                  "target/val": 96, "target/test": 128}
DEFAULT_CLS_COUNTS = {"source/train": 500, "source/val": 100, "target/train": 500,
                      "target/val": 100, "target/test": 200}


@dataclass(frozen=True)
class SceneSpec:
    """Generator parameters for one benchmark world.

    Segmentation geometry lives on a coarse cell grid (``cell`` pixels
    per cell, 4 by default): shape positions and sizes are whole cells.
    The alignment is what makes a 0.95+ source mIoU reachable for a
    small encoder-decoder whose bottleneck has to memorize the layout;
    free-floating 1-px boundaries would cap it far lower.
    """
    kind: str = "seg"            # "seg" | "cls"
    resolution: int = 32
    ambiguous: bool = True       # merge the context pair's appearance on target
    texture_noise: float = 0.035  # per-pixel appearance noise, both domains
    target_tint: tuple = (0.04, 0.05, 0.04)
    target_noise: float = 0.03   # extra pixel noise on target
    cell: int = 4
    region_cells: tuple = (2, 3)  # inclusive side range of A/B rectangles, in cells
    stripe_cells: int = 2        # stripe thickness in cells
    # Per-scene, region-A's color is drawn on the straight line from its
    # base color toward region-B's (and vice versa), up to color_spread
    # of the way.  At spread 0.5 the two ranges meet at the midpoint, so
    # near-midpoint source scenes are barely classifiable by color and
    # the landmark rules carry real training signal even on labeled
    # data.  The target's merged color sits exactly at the 0.5 midpoint
    # and the tint is chosen orthogonal to the A-B color axis, keeping
    # the merged appearance equidistant from both classes.
    color_spread: float = 0.5
    # per-class base colors; for seg order is (bg, A, B, stripe, blob, distractor)
    colors: tuple = (
        (0.45, 0.47, 0.45),
        (0.75, 0.35, 0.30),
        (0.30, 0.35, 0.75),
        (0.95, 0.95, 0.90),
        (0.85, 0.80, 0.25),
        (0.20, 0.75, 0.40),
    )

    @property
    def num_classes(self) -> int:
        return 6 if self.kind == "seg" else 4

    def validate(self):
        if self.kind not in ("seg", "cls"):
            raise ConfigError(f"spec.kind must be seg|cls, got {self.kind!r}")
        if self.resolution < 16 or self.resolution % 16:
            raise ConfigError(f"spec.resolution must be a positive multiple of 16, "
                              f"got {self.resolution}")
        if self.kind == "seg":
            if self.cell < 1 or self.resolution % self.cell:
                raise ConfigError(f"spec.cell must divide the resolution, got "
                                  f"cell={self.cell} resolution={self.resolution}")
            lo, hi = self.region_cells
            grid = self.resolution // self.cell
            if self.stripe_cells < 1:
                raise ConfigError(f"spec.stripe_cells must be >= 1, "
                                  f"got {self.stripe_cells}")
            # the largest A plus its stripe, a one-cell gap, and the
            # smallest B must fit along one axis
            if not (1 <= lo <= hi) or hi + self.stripe_cells + 1 + lo > grid:
                raise ConfigError(f"spec.region_cells {self.region_cells} infeasible "
                                  f"on a {grid}x{grid} cell grid")
            if hi < 2:
                raise ConfigError("spec.region_cells: max side must be >= 2 so "
                                  "region-B can share a two-cell edge with its blob")
            if len(self.colors) != 6:
                raise ConfigError("seg specs need 6 class colors")
        if self.texture_noise < 0 or self.target_noise < 0:
            raise ConfigError("noise levels must be non-negative")
        if not 0.0 <= self.color_spread <= 1.0:
            raise ConfigError(f"spec.color_spread must be in [0,1], "
                              f"got {self.color_spread}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["colors"] = [list(c) for c in self.colors]
        d["target_tint"] = list(self.target_tint)
        d["region_cells"] = list(self.region_cells)
        return d

    @staticmethod
    def from_dict(d: dict) -> "SceneSpec":
        kw = dict(d)
        kw["colors"] = tuple(tuple(c) for c in d["colors"])
        kw["target_tint"] = tuple(d["target_tint"])
        kw["region_cells"] = tuple(d["region_cells"])
        return SceneSpec(**kw)


PRESETS = {
    "default": SceneSpec(),
    "easy": SceneSpec(ambiguous=False, color_spread=0.0,
                      target_tint=(0.0, 0.0, 0.0), target_noise=0.0),
    "cls-default": SceneSpec(kind="cls"),
    "cls-easy": SceneSpec(kind="cls", ambiguous=False, color_spread=0.0,
                          target_tint=(0.0, 0.0, 0.0), target_noise=0.0),
}


@dataclass
class Sample:
    index: int
    image: np.ndarray   # [3,H,W] float64 in [0,1]
    label: np.ndarray   # [H,W] int64 (cls: scalar array)


@dataclass
class SplitData:
    images: np.ndarray
    labels: np.ndarray | None
    manifest: dict


# ------------------------------------------------------------ geometry
# seg layout works in cell coordinates; every box is (r0, c0, r1, c1)
# half-open on an (res/cell)^2 grid and scaled up only when painting.

def _boxes_clear(box, others, gap):
    r0, c0, r1, c1 = box
    for (s0, t0, s1, t1) in others:
        if not (r1 + gap <= s0 or s1 + gap <= r0 or c1 + gap <= t0 or t1 + gap <= c0):
            return False
    return True


def _place_rect(rng, grid, size_lo, size_hi, taken, gap, tries=120):
    for _ in range(tries):
        hh = int(rng.integers(size_lo, size_hi + 1))
        ww = int(rng.integers(size_lo, size_hi + 1))
        box = _at_random(rng, grid, hh, ww)
        if _boxes_clear(box, taken, gap):
            return box
    return None


def _place_box(rng, grid, hh, ww, taken, gap, tries=120):
    for _ in range(tries):
        box = _at_random(rng, grid, hh, ww)
        if _boxes_clear(box, taken, gap):
            return box
    return None


def _at_random(rng, grid, hh, ww):
    r0 = int(rng.integers(0, grid - hh + 1))
    c0 = int(rng.integers(0, grid - ww + 1))
    return (r0, c0, r0 + hh, c0 + ww)


def _stripe_for(rng, grid, box, thick):
    """A stripe `thick` cells deep sharing one full side with `box`.

    Thickness matters downstream: the stripe is the context cue the
    masked branches depend on, and a cue thinner than one mask patch
    disappears under masking too often for the adjacency rule to stay
    learnable."""
    r0, c0, r1, c1 = box
    sides = ["top", "bottom", "left", "right"]
    rng.shuffle(sides)
    for side in sides:
        if side == "top" and r0 - thick >= 0:
            return (r0 - thick, c0, r0, c1)
        if side == "bottom" and r1 + thick <= grid:
            return (r1, c0, r1 + thick, c1)
        if side == "left" and c0 - thick >= 0:
            return (r0, c0 - thick, r1, c0)
        if side == "right" and c1 + thick <= grid:
            return (r0, c1, r1, c1 + thick)
    return None


def _paint(label, box, cls, cell):
    r0, c0, r1, c1 = box
    label[r0 * cell:r1 * cell, c0 * cell:c1 * cell] = cls


def _attach_box(rng, grid, host, hh, ww, others, tries=120):
    """An (hh, ww) box flush against one side of `host`, sharing at
    least a two-cell edge with it, in bounds and one cell clear of
    everything in `others`."""
    r0, c0, r1, c1 = host
    for _ in range(tries):
        side = ("top", "bottom", "left", "right")[int(rng.integers(0, 4))]
        if side in ("top", "bottom"):
            lo, hi = c0 - ww + 2, c1 - 2 + 1
            if hi <= lo:  # host side too short to share a 2-cell edge
                continue
            rr0 = r0 - hh if side == "top" else r1
            cc0 = int(rng.integers(lo, hi))
            box = (rr0, cc0, rr0 + hh, cc0 + ww)
        else:
            lo, hi = r0 - hh + 2, r1 - 2 + 1
            if hi <= lo:
                continue
            cc0 = c0 - ww if side == "left" else c1
            rr0 = int(rng.integers(lo, hi))
            box = (rr0, cc0, rr0 + hh, cc0 + ww)
        if box[0] < 0 or box[1] < 0 or box[2] > grid or box[3] > grid:
            continue
        if _boxes_clear(box, others, 1):
            return box
    return None


def _seg_layout(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Label map with one region-A hugging its stripe, one region-B
    hugging the blob, and a free-floating distractor.

    Each of the two ambiguous regions gets a positively visible
    landmark: A's stripe and B's blob.  A cue encoded as the *absence*
    of a landmark would be unlearnable from masked views, where absence
    is indistinguishable from "hidden by a mask patch".  Unrelated
    structures stay at least one empty cell apart, so touching a stripe
    (or blob) is never an accident of packing."""
    res = spec.resolution
    cell = spec.cell
    grid = res // cell
    lo, hi = spec.region_cells
    for _ in range(40):  # whole-scene retries
        label = np.zeros((res, res), dtype=np.int64)
        a_box = _place_rect(rng, grid, lo, hi, [], 0)
        stripe = _stripe_for(rng, grid, a_box, spec.stripe_cells)
        if stripe is None:
            continue
        taken = [a_box, stripe]
        b_box = _place_rect(rng, grid, lo, hi, taken, 1)
        if b_box is None:
            continue
        bh, bw = (2, 3) if rng.random() < 0.5 else (3, 2)
        blob_box = _attach_box(rng, grid, b_box, bh, bw, taken)
        if blob_box is None:
            continue
        taken += [b_box, blob_box]
        d_box = _place_box(rng, grid, 2, 2, taken, 1)
        if d_box is None:
            continue
        _paint(label, a_box, 1, cell)
        _paint(label, stripe, 3, cell)
        _paint(label, b_box, 2, cell)
        _paint(label, blob_box, 4, cell)
        _paint(label, d_box, 5, cell)
        return label
    raise ConfigError("could not lay out a scene satisfying the adjacency rule; "
                      "shrink region_cells or raise the resolution")


def _cls_layout(spec: SceneSpec, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Object mask [H,W] in {0..2}: 0 bg, 1 object, 2 corner marker."""
    res = spec.resolution
    cls = int(rng.integers(0, 4))
    cy = res / 2 + float(rng.uniform(-3, 3))
    cx = res / 2 + float(rng.uniform(-3, 3))
    radius = float(rng.uniform(7, 10))
    yy, xx = np.mgrid[0:res, 0:res]
    if cls in (0, 1):
        inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
    elif cls == 2:
        inside = (np.abs(yy - cy) <= radius * 0.8) & (np.abs(xx - cx) <= radius * 0.8)
    else:
        inside = (np.abs(yy - cy) + np.abs(xx - cx)) <= radius * 1.1
    mask = inside.astype(np.int64)
    corner = int(rng.integers(0, 4))  # marker position drawn for every class
    if cls == 0:
        r0 = 1 if corner < 2 else res - 5
        c0 = 1 if corner % 2 == 0 else res - 5
        mask[r0:r0 + 4, c0:c0 + 4] = 2
    return mask, cls


# ---------------------------------------------------------- appearance

def _colorize(spec: SceneSpec, label: np.ndarray, domain: str,
              rng: np.random.Generator, cls_id: int | None = None) -> np.ndarray:
    res = spec.resolution
    if spec.kind == "seg":
        colors = np.array(spec.colors, dtype=np.float64)
        # Per-scene positions on the A->B color line.  Drawn for every
        # scene regardless of domain so the stream layout is fixed.
        t_a = rng.uniform(0.0, 1.0) * spec.color_spread
        t_b = 1.0 - rng.uniform(0.0, 1.0) * spec.color_spread
        base_a, base_b = colors[1].copy(), colors[2].copy()
        if domain == "target" and spec.ambiguous:
            colors[1] = colors[2] = 0.5 * (base_a + base_b)
        else:
            colors[1] = base_a + t_a * (base_b - base_a)
            colors[2] = base_a + t_b * (base_b - base_a)
        img = colors[label].transpose(2, 0, 1)
    else:
        # cls: label is the {bg, object, marker} mask; color by class id
        bg = np.array([0.45, 0.45, 0.45])
        marker = np.array([0.95, 0.95, 0.95])
        obj_colors = np.array([
            [0.75, 0.30, 0.30],   # circle with marker
            [0.30, 0.40, 0.75],   # circle without marker
            [0.80, 0.80, 0.30],   # square
            [0.30, 0.75, 0.40],   # diamond
        ])
        if domain == "target" and spec.ambiguous:
            merged = (obj_colors[0] + obj_colors[1]) / 2.0
            obj_colors = obj_colors.copy()
            obj_colors[0] = merged
            obj_colors[1] = merged
        lut = np.stack([bg, obj_colors[cls_id], marker])
        img = lut[label].transpose(2, 0, 1)
    img = img + rng.normal(0.0, spec.texture_noise, size=(3, res, res))
    if domain == "target":
        img = img + np.asarray(spec.target_tint, dtype=np.float64).reshape(3, 1, 1)
        if spec.target_noise > 0:
            img = img + rng.normal(0.0, spec.target_noise, size=(3, res, res))
    return np.clip(img, 0.0, 1.0)


def generate_scene(spec: SceneSpec, domain: str, rng: np.random.Generator):
    """One (image, label) pair.  Draw order: layout first, then the
    per-pixel texture noise, then target-only noise.  ``domain`` selects
    the appearance parameters; geometry statistics are identical across
    domains."""
    spec.validate()
    if domain not in ("source", "target"):
        raise ConfigError(f"domain must be source|target, got {domain!r}")
    if spec.kind == "seg":
        label = _seg_layout(spec, rng)
        image = _colorize(spec, label, domain, rng)
        return image, label
    mask, cls = _cls_layout(spec, rng)
    image = _colorize(spec, mask, domain, rng, cls_id=cls)
    return image, np.int64(cls)


def generate_dataset(spec: SceneSpec, domain: str, n: int, seed: int,
                     index_offset: int = 0) -> list[Sample]:
    """``n`` segmentation samples for one domain, deterministic per
    (spec, domain, seed).  Sample i draws from an isolated stream keyed
    by (seed, index_offset + i), so disjoint offsets give disjoint
    randomness (the on-disk splits use this)."""
    if spec.kind != "seg":
        raise ConfigError("generate_dataset expects a seg spec; use "
                          "generate_cls_dataset for classification")
    if n <= 0:
        raise ConfigError(f"sample count must be > 0, got {n}")
    out = []
    for i in range(n):
        rng = sample_stream(seed, index_offset + i)
        image, label = generate_scene(spec, domain, rng)
        out.append(Sample(index=i, image=image, label=label))
    return out


def generate_cls_dataset(spec: SceneSpec, domain: str, n: int, seed: int,
                         index_offset: int = 0) -> list[tuple]:
    """``n`` (image, class) pairs for one domain; same determinism
    contract as ``generate_dataset``."""
    if spec.kind != "cls":
        raise ConfigError("generate_cls_dataset expects a cls spec")
    if n <= 0:
        raise ConfigError(f"sample count must be > 0, got {n}")
    out = []
    for i in range(n):
        rng = sample_stream(seed, index_offset + i)
        image, label = generate_scene(spec, domain, rng)
        out.append((image, int(label)))
    return out


# ------------------------------------------------------------- file io

def write_array(path: str, arr: np.ndarray) -> None:
    """Flat binary array: 8-byte magic, u32 version, u8 dtype code,
    u8 ndim, u16 zero pad, u64 dims, then little-endian C-order data."""
    arr = np.ascontiguousarray(arr)
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise ConfigError(f"unsupported array dtype {arr.dtype}")
    with open(path, "wb") as fh:
        fh.write(ARRAY_MAGIC)
        fh.write(np.uint32(1).tobytes())
        fh.write(np.uint8(code).tobytes())
        fh.write(np.uint8(arr.ndim).tobytes())
        fh.write(np.uint16(0).tobytes())
        fh.write(np.asarray(arr.shape, dtype=np.uint64).tobytes())
        fh.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def read_array(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != ARRAY_MAGIC:
            raise IOError(f"{path}: bad array magic {magic!r}")
        head = fh.read(8)
        if len(head) < 8:
            raise IOError(f"{path}: truncated header")
        version = int(np.frombuffer(head[0:4], dtype=np.uint32)[0])
        if version != 1:
            raise IOError(f"{path}: unsupported array format version {version}")
        code = head[4]
        ndim = head[5]
        if code not in _DTYPES:
            raise IOError(f"{path}: unknown dtype code {code}")
        dims_raw = fh.read(8 * ndim)
        if len(dims_raw) < 8 * ndim:
            raise IOError(f"{path}: truncated dims")
        shape = tuple(int(d) for d in np.frombuffer(dims_raw, dtype=np.uint64))
        dtype = np.dtype(_DTYPES[code]).newbyteorder("<")
        raw = fh.read()
        want = int(np.prod(shape)) * dtype.itemsize
        if len(raw) != want:
            raise IOError(f"{path}: expected {want} data bytes, found {len(raw)}")
        return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(_DTYPES[code])


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_split(out_dir: str, split: str, spec: SceneSpec, seed: int, count: int):
    offset = SPLIT_OFFSETS[split]
    domain = split.split("/")[0]
    sealed = split == "target/train"
    res = spec.resolution
    images = np.empty((count, 3, res, res), dtype=np.float64)
    if spec.kind == "seg":
        labels = np.empty((count, res, res), dtype=np.int64)
        pairs = [(s.image, s.label) for s in
                 generate_dataset(spec, domain, count, seed, index_offset=offset)]
    else:
        labels = np.empty((count,), dtype=np.int64)
        pairs = generate_cls_dataset(spec, domain, count, seed, index_offset=offset)
    samples = []
    for i, (img, lab) in enumerate(pairs):
        images[i] = img
        labels[i] = lab
        samples.append({"index": i, "stream_key": [seed, offset + i]})
    split_dir = os.path.join(out_dir, *split.split("/"))
    os.makedirs(split_dir, exist_ok=True)
    img_file = "images.bin"
    lab_file = "labels_sealed.bin" if sealed else "labels.bin"
    write_array(os.path.join(split_dir, img_file), images)
    write_array(os.path.join(split_dir, lab_file), labels)
    manifest = {
        "format": 1,
        "kind": spec.kind,
        "split": split,
        "domain": domain,
        "seed": seed,
        "count": count,
        "sealed_labels": sealed,
        "files": {"images": img_file, "labels": lab_file},
        "sha256": {img_file: _sha256(os.path.join(split_dir, img_file)),
                   lab_file: _sha256(os.path.join(split_dir, lab_file))},
        "spec": spec.to_dict(),
        "samples": samples,
    }
    with open(os.path.join(split_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    return manifest


def _generate(spec: SceneSpec, out_dir: str, seed: int, counts: dict,
              force: bool) -> dict:
    spec.validate()
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ConfigError(f"dataset seed must be a non-negative integer, got {seed!r}")
    for split, n in counts.items():
        if split not in SPLIT_OFFSETS:
            raise ConfigError(f"unknown split {split!r}")
        if n <= 0:
            raise ConfigError(f"split {split!r}: sample count must be > 0, got {n}")
        if n > 900_000:
            raise ConfigError(f"split {split!r}: count {n} exceeds the split's index range")
    if os.path.isdir(out_dir) and os.listdir(out_dir):
        if not force:
            raise IOError(f"output directory {out_dir!r} exists and is not empty "
                          f"(pass force to overwrite)")
    os.makedirs(out_dir, exist_ok=True)
    manifests = {}
    for split in SPLIT_OFFSETS:  # fixed order
        if split in counts:
            manifests[split] = _write_split(out_dir, split, spec, seed, counts[split])
    digest = hashlib.sha256()
    for split, man in manifests.items():
        for f, h in sorted(man["sha256"].items()):
            digest.update(h.encode())
    top = {
        "format": 1,
        "kind": spec.kind,
        "seed": seed,
        "counts": {k: counts[k] for k in manifests},
        "spec": spec.to_dict(),
        "content_hash": digest.hexdigest(),
    }
    with open(os.path.join(out_dir, "dataset.json"), "w") as fh:
        json.dump(top, fh, sort_keys=True, indent=1)
    return top


def write_benchmark(spec: SceneSpec, out_dir: str, seed: int,
                    counts: dict | None = None, force: bool = False) -> dict:
    """Write a full benchmark (every split, both domains) to
    ``out_dir``; returns the top-level manifest.  Regenerating with the
    same arguments is byte-identical."""
    defaults = DEFAULT_COUNTS if spec.kind == "seg" else DEFAULT_CLS_COUNTS
    return _generate(spec, out_dir, seed, dict(counts or defaults), force)


def load_split(root: str, split: str, unseal: bool = False) -> SplitData:
    """Read one split.  Sealed labels come back as None unless ``unseal``
    is explicitly passed (evaluation and the supervised-target trainer
    are the only intended unsealers)."""
    split_dir = os.path.join(root, *split.split("/"))
    man_path = os.path.join(split_dir, "manifest.json")
    if not os.path.isfile(man_path):
        raise IOError(f"no manifest at {man_path}")
    with open(man_path) as fh:
        manifest = json.load(fh)
    images = read_array(os.path.join(split_dir, manifest["files"]["images"]))
    labels = None
    if not manifest.get("sealed_labels") or unseal:
        labels = read_array(os.path.join(split_dir, manifest["files"]["labels"]))
    if images.ndim != 4:
        raise ShapeError(f"{split}: images must be [N,3,H,W], got {images.shape}")
    return SplitData(images=images, labels=labels, manifest=manifest)


def load_dataset(root: str, unseal_target_train: bool = False) -> dict[str, SplitData]:
    """All splits present under ``root`` keyed by split name."""
    top_path = os.path.join(root, "dataset.json")
    if not os.path.isfile(top_path):
        raise IOError(f"no dataset manifest at {top_path}")
    with open(top_path) as fh:
        top = json.load(fh)
    out = {}
    for split in top["counts"]:
        out[split] = load_split(root, split,
                                unseal=(split == "target/train" and unseal_target_train))
    out["__meta__"] = top
    return out
