"""Procedural CCM-like nerve masks and images with known construction truth.

Trunks are quadratic B-splines running across the field at a shared base
orientation; side branches leave a trunk at an oblique angle and end freely.
Every fibre is checked against the ones already placed and redrawn if it would
touch them, so the recorded truth (trunk count, branch points, centreline
length) is exactly what ends up in the mask.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.interpolate import BSpline

from .errors import ConfigError, DataError
from .imgio import read_gray, read_mask, write_gray, write_mask
from .model import CLASS_NAMES

FULL_SIZE = 384
TRAIN_SIZE = 32
GAP_PX = 6.0  # minimum clearance between unrelated fibres
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class MorphParams:
    n_trunks: tuple[int, int]
    branch_prob: float
    tortuosity: float
    width_px: tuple[float, float]
    branch_len: tuple[float, float] = (45.0, 90.0)
    branch_slots: int = 3

    def __post_init__(self):
        if not (1 <= self.n_trunks[0] <= self.n_trunks[1]):
            raise ConfigError(f"bad n_trunks range {self.n_trunks}")
        if not 0.0 <= self.branch_prob <= 1.0:
            raise ConfigError(f"branch_prob must be in [0, 1], got {self.branch_prob}")
        if not 0.0 < self.width_px[0] <= self.width_px[1]:
            raise ConfigError(f"bad width range {self.width_px}")


# Severity lowers trunk count and branching and raises tortuosity.
CLASS_PARAMS = {
    0: MorphParams(n_trunks=(5, 7), branch_prob=0.55, tortuosity=0.035, width_px=(3.0, 5.0)),
    1: MorphParams(n_trunks=(4, 5), branch_prob=0.50, tortuosity=0.050, width_px=(3.0, 4.5)),
    2: MorphParams(n_trunks=(3, 3), branch_prob=0.35, tortuosity=0.070, width_px=(2.5, 4.0)),
}


@dataclass
class Truth:
    trunks: int = 0
    branch_points: int = 0
    length_px: float = 0.0  # 8-connected centreline length, half a pixel per free end
    arc_length_px: float = 0.0  # continuous spline length inside the field

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Sample:
    image: np.ndarray
    mask: np.ndarray
    class_id: int
    truth: Truth
    full_mask: np.ndarray | None = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------
def _spline(ctrl: np.ndarray, n: int) -> np.ndarray:
    """Clamped quadratic B-spline through ``ctrl`` (``[m, 2]`` as x, y), sampled at ``n`` points."""
    m = len(ctrl)
    k = 2
    knots = np.concatenate([np.zeros(k), np.linspace(0.0, 1.0, m - k + 1), np.ones(k)])
    return BSpline(knots, ctrl, k)(np.linspace(0.0, 1.0, n))


def _chain(points: np.ndarray, h: int, w: int) -> list[tuple[int, int]]:
    """Minimal 8-connected pixel chain following ``points`` (x, y), clipped to the field."""
    out: list[tuple[int, int]] = []
    for x, y in points:
        r, c = int(round(y)), int(round(x))
        if not (0 <= r < h and 0 <= c < w):
            if out:
                break
            continue
        if out:
            pr, pc = out[-1]
            if (r, c) == (pr, pc):
                continue
            steps = max(abs(r - pr), abs(c - pc))
            for s in range(1, steps):  # fill gaps from coarse sampling
                out.append((pr + round((r - pr) * s / steps), pc + round((c - pc) * s / steps)))
        out.append((r, c))
    # drop corner pixels whose neighbours already touch
    i = 1
    while i < len(out) - 1:
        a, b = out[i - 1], out[i + 1]
        if max(abs(a[0] - b[0]), abs(a[1] - b[1])) <= 1:
            del out[i]
            i = max(i - 1, 1)
        else:
            i += 1
    return out


def chain_length(chain: list[tuple[int, int]]) -> float:
    total = 0.0
    for (r0, c0), (r1, c1) in zip(chain, chain[1:]):
        total += SQRT2 if r0 != r1 and c0 != c1 else 1.0
    return total


def _arc_length(points: np.ndarray, h: int, w: int) -> float:
    inside = (points[:, 0] >= -0.5) & (points[:, 0] <= w - 0.5) & (points[:, 1] >= -0.5) & (points[:, 1] <= h - 0.5)
    p = points[inside]
    return float(np.sum(np.hypot(*np.diff(p, axis=0).T))) if len(p) > 1 else 0.0


def _stroke(chain, width: float, h: int, w: int) -> np.ndarray:
    """Pixels within ``width / 2`` of the chain (distance transform on its bounding box)."""
    out = np.zeros((h, w), dtype=bool)
    if not chain:
        return out
    rc = np.asarray(chain)
    pad = int(math.ceil(width / 2.0)) + 1
    r0, c0 = np.maximum(rc.min(0) - pad, 0)
    r1, c1 = np.minimum(rc.max(0) + pad + 1, (h, w))
    line = np.ones((r1 - r0, c1 - c0), dtype=bool)
    line[rc[:, 0] - r0, rc[:, 1] - c0] = False
    out[r0:r1, c0:c1] = ndimage.distance_transform_edt(line) <= width / 2.0
    return out


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------
def _draw_trunk(rng, params: MorphParams, angle: float, offset: float, h: int, w: int):
    """Centreline of a trunk crossing the whole field along ``angle`` at normal offset ``offset``."""
    n_ctrl = 6
    t = np.linspace(-0.15, 1.15, n_ctrl) * max(h, w)
    wobble = rng.normal(0.0, params.tortuosity * h, size=n_ctrl)
    d = np.array([math.cos(angle), math.sin(angle)])
    nrm = np.array([-d[1], d[0]])
    centre = np.array([w / 2.0, h / 2.0]) - d * max(h, w) / 2.0
    ctrl = centre + t[:, None] * d + (offset + wobble)[:, None] * nrm
    return _spline(ctrl, 4 * max(h, w))


def _draw_branch(rng, params: MorphParams, trunk_pts: np.ndarray, idx: int):
    p0 = trunk_pts[idx]
    tang = trunk_pts[min(idx + 3, len(trunk_pts) - 1)] - trunk_pts[max(idx - 3, 0)]
    base = math.atan2(tang[1], tang[0])
    if rng.random() < 0.5:
        base += math.pi  # branch may point either way along the trunk
    theta = base + rng.choice([-1.0, 1.0]) * rng.uniform(math.radians(35), math.radians(60))
    length = rng.uniform(*params.branch_len)
    bend = rng.normal(0.0, params.tortuosity * 2.0)
    ts = np.array([0.0, 0.5, 1.0])
    angs = theta + bend * ts
    ctrl = p0 + np.stack([np.cos(angs), np.sin(angs)], 1) * (ts * length)[:, None]
    return _spline(ctrl, int(4 * length) + 8)


def gen_mask(class_id: int, seed: int, H: int = FULL_SIZE, W: int = FULL_SIZE,
             params: MorphParams | None = None, max_tries: int = 60) -> tuple[np.ndarray, Truth]:
    """Draw one binary mask and its construction truth."""
    if params is None:
        if class_id not in CLASS_PARAMS:
            raise ConfigError(f"class_id must be one of {sorted(CLASS_PARAMS)}, got {class_id}")
        params = CLASS_PARAMS[class_id]
    rng = np.random.default_rng([int(seed), int(class_id)])
    mask = np.zeros((H, W), dtype=bool)
    keep_out = np.zeros((H, W), dtype=bool)  # fibres grown by the clearance gap
    truth = Truth()
    angle = rng.uniform(math.radians(-25), math.radians(25))
    margin = 14.0
    n_trunks = int(rng.integers(params.n_trunks[0], params.n_trunks[1] + 1))
    trunks = []

    # trunks: evenly spread offsets with jitter, redrawn on collision
    span = min(H, W) - 2 * margin
    for i in range(n_trunks):
        for _ in range(max_tries):
            off = -span / 2 + span * (i + 0.5) / n_trunks + rng.normal(0.0, span / (8 * n_trunks))
            pts = _draw_trunk(rng, params, angle, off, H, W)
            chain = _chain(pts, H, W)
            if len(chain) < 2 or not _spans(chain, H, W):
                continue
            width = rng.uniform(*params.width_px)
            stroke = _stroke(chain, width, H, W)
            if (stroke & keep_out).any():
                continue
            mask |= stroke
            keep_out |= _stroke(chain, width + 2 * GAP_PX, H, W)
            trunks.append((pts, chain, width))
            truth.trunks += 1
            truth.length_px += chain_length(chain) + 1.0
            truth.arc_length_px += _arc_length(pts, H, W)
            break

    # branches: a few candidate slots per trunk
    junctions: list[tuple[int, int]] = []
    for pts, chain, t_width in trunks:
        trunk_zone = _stroke(chain, t_width + 2 * GAP_PX, H, W)
        for _ in range(params.branch_slots):
            if rng.random() >= params.branch_prob:
                continue
            for _ in range(max_tries // 4):
                r, c = chain[int(rng.integers(len(chain) // 8, len(chain) - len(chain) // 8))]
                if any(abs(r - jr) + abs(c - jc) < 40 for jr, jc in junctions):
                    continue
                idx = int(np.argmin(np.hypot(pts[:, 0] - c, pts[:, 1] - r)))
                bpts = _draw_branch(rng, params, pts, idx)
                bpts[0] = (c, r)
                if not _inside(bpts[-1], H, W, margin):
                    continue
                bchain = _chain(bpts, H, W)
                if len(bchain) < 10:
                    continue
                width = rng.uniform(params.width_px[0], min(params.width_px[1], t_width))
                stroke = _stroke(bchain, width, H, W)
                # the branch may only meet its own trunk, near the junction
                near = np.zeros((H, W), dtype=bool)
                near[max(r - 30, 0):r + 31, max(c - 30, 0):c + 31] = True
                own = trunk_zone & near
                if (stroke & keep_out & ~own).any():
                    continue
                # the tip must sit clear of its own trunk as well
                tip_zone = _stroke(bchain[len(bchain) // 2:], width + 2 * GAP_PX, H, W)
                if (tip_zone & mask).any():
                    continue
                mask |= stroke
                keep_out |= _stroke(bchain, width + 2 * GAP_PX, H, W)
                junctions.append((r, c))
                truth.branch_points += 1
                truth.length_px += chain_length(bchain) + 0.5
                truth.arc_length_px += _arc_length(bpts, H, W)
                break
    return mask.astype(np.uint8), truth


def _spans(chain, h: int, w: int) -> bool:
    """Both chain ends lie on the field border."""
    def on_border(p):
        return p[0] in (0, h - 1) or p[1] in (0, w - 1)
    return on_border(chain[0]) and on_border(chain[-1])


def _inside(p, h: int, w: int, margin: float) -> bool:
    return margin <= p[0] <= w - 1 - margin and margin <= p[1] <= h - 1 - margin


def straight_trunk_mask(H: int = FULL_SIZE, W: int = FULL_SIZE, row: int | None = None,
                        width: float = 3.0) -> tuple[np.ndarray, Truth]:
    """A single horizontal trunk across the field."""
    row = H // 2 if row is None else row
    chain = [(row, c) for c in range(W)]
    return _stroke(chain, width, H, W).astype(np.uint8), Truth(1, 0, chain_length(chain) + 1.0, float(W))


def downsample_mask(mask: np.ndarray, size: int = TRAIN_SIZE) -> np.ndarray:
    """Block maximum: a low-res pixel is fibre if any covered full-res pixel is."""
    h, w = mask.shape
    if h % size or w % size:
        raise ConfigError(f"mask {h}x{w} is not a multiple of {size}")
    f = h // size
    return (np.asarray(mask) > 0).reshape(size, f, size, w // size).max(axis=(1, 3)).astype(np.uint8)


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class RenderStyle:
    background: float = 0.36  # mean stromal grey level
    speckle_shape: float = 12.0  # gamma shape; larger means weaker speckle
    ramp: tuple[float, float] = (0.1, 0.3)  # illumination gradient strength
    fibre_amp: float = 0.55
    blur: float = 0.6  # cross-profile sigma in low-res pixels


STYLES = {
    "ccm": RenderStyle(),
    # a cleaner, darker, softer look used as the pretraining domain
    "source": RenderStyle(background=0.22, speckle_shape=40.0, ramp=(0.0, 0.1), fibre_amp=0.45, blur=0.9),
}


def render_image(mask: np.ndarray, seed: int, style: str | RenderStyle = "ccm") -> np.ndarray:
    """CCM-like grey image for a binary mask.

    Mid-grey stroma with multiplicative speckle and a smooth illumination
    field; fibres are bright with a Gaussian cross-profile.
    """
    st = STYLES[style] if isinstance(style, str) else style
    mask = np.asarray(mask) > 0
    h, w = mask.shape
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    phi = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(phi) * (xx - 0.5) + np.sin(phi) * (yy - 0.5)) * rng.uniform(*st.ramp)
    blob = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=max(h, w) / 6.0, mode="wrap")
    blob *= 0.08 / max(blob.std(), 1e-12)
    illum = 1.0 + ramp + blob
    speckle = rng.gamma(shape=st.speckle_shape, scale=1.0 / st.speckle_shape, size=(h, w))
    background = st.background * illum * speckle
    sigma = st.blur * max(h, w) / TRAIN_SIZE
    profile = np.clip(ndimage.gaussian_filter(mask.astype(np.float64), sigma) * 1.6, 0.0, 1.0)
    fibre = st.fibre_amp * profile * rng.uniform(0.9, 1.1) * np.sqrt(illum)
    return np.clip(background + fibre, 0.0, 1.0)


def make_sample(class_id: int, seed: int, size: int = TRAIN_SIZE, full: int = FULL_SIZE,
                params: MorphParams | None = None, style: str = "ccm") -> Sample:
    full_mask, truth = gen_mask(class_id, seed, full, full, params)
    small = downsample_mask(full_mask, size)
    return Sample(render_image(small, seed, style), small, class_id, truth, full_mask)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------
def gen_dataset(n_per_class: int, seed: int, out_dir: str | Path, size: int = TRAIN_SIZE,
                full: int = FULL_SIZE, test_fraction: float = 0.2, fmt: str = "png",
                style: str = "ccm") -> dict:
    """Write ``images/``, ``masks/`` and ``manifest.json``; returns the manifest."""
    if n_per_class < 1:
        raise ConfigError("n_per_class must be >= 1")
    if style not in STYLES:
        raise ConfigError(f"style must be one of {sorted(STYLES)}, got {style!r}")
    if fmt not in ("png", "pgm"):
        raise ConfigError(f"format must be png or pgm, got {fmt!r}")
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset directory {out}: {exc}") from exc
    n_test = int(round(n_per_class * test_fraction))
    ss = np.random.SeedSequence(seed)
    entries = []
    for class_id, child in enumerate(ss.spawn(len(CLASS_NAMES))):
        seeds = child.generate_state(n_per_class)
        order = np.random.default_rng(child).permutation(n_per_class)
        test_idx = set(order[:n_test].tolist())
        for i, s in enumerate(seeds):
            s = int(s)
            smp = make_sample(class_id, s, size, full, style=style)
            name = f"{CLASS_NAMES[class_id]}_{i:04d}"
            write_gray(out / "images" / f"{name}.{fmt}", smp.image)
            write_mask(out / "masks" / f"{name}.{fmt}", smp.mask)
            write_mask(out / "masks" / f"{name}_full.{fmt}", smp.full_mask)
            entries.append({
                "id": name, "class": CLASS_NAMES[class_id], "class_id": class_id, "seed": s,
                "split": "test" if i in test_idx else "train",
                "image": f"images/{name}.{fmt}", "mask": f"masks/{name}.{fmt}",
                "mask_full": f"masks/{name}_full.{fmt}", "truth": smp.truth.as_dict(),
            })
    manifest = {"format": "nervesynth-dataset-v1", "seed": seed, "n_per_class": n_per_class,
                "image_size": size, "full_size": full, "field_um": 400.0, "style": style,
                "classes": list(CLASS_NAMES), "samples": entries}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def load_manifest(path: str | Path) -> dict:
    """Read a dataset manifest (a directory or the JSON file itself)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise DataError(f"no manifest at {path}")
    with open(path) as fh:
        doc = json.load(fh)
    if "samples" not in doc:
        raise DataError(f"{path} is not a dataset manifest")
    doc["_root"] = str(path.parent)
    return doc


def split(manifest: dict, which: str) -> list[dict]:
    return [e for e in manifest["samples"] if e.get("split", "train") == which]


def load_arrays(manifest: dict, which: str | None = "train", full_masks: bool = False):
    """``(images [N,H,W], masks [N,H,W], labels [N])`` for one split (or all when None)."""
    root = Path(manifest["_root"])
    rows = manifest["samples"] if which is None else split(manifest, which)
    if not rows:
        return np.zeros((0, 0, 0)), np.zeros((0, 0, 0), np.uint8), np.zeros(0, np.int64)
    imgs = np.stack([read_gray(root / e["image"]) for e in rows])
    key = "mask_full" if full_masks else "mask"
    masks = np.stack([read_mask(root / e[key]) for e in rows])
    labels = np.array([e["class_id"] for e in rows], dtype=np.int64)
    return imgs, masks, labels


def manifest_hash(manifest: dict, which: str | None = None) -> str:
    """SHA-256 over the listed entries and the bytes of their files."""
    root = Path(manifest["_root"])
    rows = manifest["samples"] if which is None else split(manifest, which)
    h = hashlib.sha256()
    for e in rows:
        h.update(json.dumps({k: v for k, v in e.items()}, sort_keys=True).encode())
        for key in ("image", "mask"):
            if key in e:
                h.update((root / e[key]).read_bytes())
    return h.hexdigest()
