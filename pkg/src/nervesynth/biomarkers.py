"""Corneal nerve morphometry from binary masks: CNFL, CNFD, CNBD and CNFW.

Pipeline: thin the mask to a one-pixel skeleton, prune short spurs, build a
graph of endpoints / branch nodes joined by traced segments, then measure.
Segment lengths count axial steps as 1 and diagonal steps as sqrt(2).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from . import _kernels as K
from .errors import UndefinedValueError

FIELD_UM = 400.0
FIELD_PX = 384
DEFAULT_PITCH_UM = FIELD_UM / FIELD_PX
TRUNK_MIN_LEN_UM = 50 * DEFAULT_PITCH_UM  # 50 px at the native 384-px resolution
SPUR_PX = 5.0  # at the native 384-px resolution
JUNCTION_MERGE_PX = 3.0  # branch nodes linked by a segment this short are one junction
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class Geometry:
    width_px: int = FIELD_PX
    height_px: int = FIELD_PX
    pitch_um: float = DEFAULT_PITCH_UM

    @classmethod
    def for_shape(cls, shape: tuple[int, int], field_um: float = FIELD_UM) -> "Geometry":
        """Geometry of an image that covers the standard ``field_um`` square."""
        h, w = shape
        return cls(width_px=w, height_px=h, pitch_um=field_um / w)

    @property
    def field_area_mm2(self) -> float:
        return (self.width_px * self.pitch_um) * (self.height_px * self.pitch_um) / 1e6

    def default_trunk_px(self) -> float:
        return TRUNK_MIN_LEN_UM / self.pitch_um

    def default_spur_px(self) -> float:
        return SPUR_PX * DEFAULT_PITCH_UM / self.pitch_um


@dataclass
class Segment:
    a: int
    b: int
    length: float
    pixels: list[tuple[int, int]] = field(repr=False)


@dataclass
class SkeletonGraph:
    skeleton: np.ndarray
    nodes: list[tuple[float, float, str]]  # (x, y, "endpoint" | "branch")
    segments: list[Segment]
    components: np.ndarray  # component label per node
    node_pixels: list[list[tuple[int, int]]] = field(repr=False)
    junction_length: float = 0.0  # length of short links folded into merged junctions

    @property
    def n_components(self) -> int:
        return int(self.components.max()) + 1 if self.components.size else 0

    def endpoints(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n[2] == "endpoint"]

    def branch_nodes(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n[2] == "branch"]

    def total_length(self) -> float:
        return float(sum(s.length for s in self.segments)) + self.junction_length

    def component_longest_paths(self) -> np.ndarray:
        """Longest geodesic (in px) within each component, by double Dijkstra sweep."""
        n = len(self.nodes)
        out = np.zeros(self.n_components)
        if n == 0:
            return out
        rows, cols, vals = [], [], []
        loops = np.zeros(self.n_components)
        for s in self.segments:
            if s.a == s.b:
                loops[self.components[s.a]] = max(loops[self.components[s.a]], s.length / 2)
                continue
            rows += [s.a, s.b]
            cols += [s.b, s.a]
            vals += [s.length, s.length]
        g = coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        for c in range(self.n_components):
            members = np.flatnonzero(self.components == c)
            d0 = dijkstra(g, indices=members[0])
            far = members[np.argmax(np.where(np.isfinite(d0[members]), d0[members], -1))]
            d1 = dijkstra(g, indices=far)
            vals_c = d1[members]
            out[c] = max(float(np.max(vals_c[np.isfinite(vals_c)])), loops[c])
        return out


@dataclass
class BiomarkerReport:
    cnfl: float
    cnfd: float
    cnbd: float
    cnfw: float | None
    field_area: float
    pixel_pitch: float
    cnfw_per_area: float | None = None
    cnfw_defined: bool = True

    def as_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# skeleton
# ---------------------------------------------------------------------------
def skeletonize(mask: np.ndarray) -> np.ndarray:
    """One-pixel-wide 8-connected centrelines of ``mask`` (uint8)."""
    return K.cleanup(K.zhang_suen(mask))


_STEPS = [(int(dr), int(dc)) for dr, dc in K.RING]


def _neighbours(skel: np.ndarray, i: int, j: int):
    h, w = skel.shape
    for dr, dc in _STEPS:
        y, x = i + dr, j + dc
        if 0 <= y < h and 0 <= x < w and skel[y, x]:
            yield y, x


def _step(p, q) -> float:
    return SQRT2 if p[0] != q[0] and p[1] != q[1] else 1.0


def build_graph(skeleton: np.ndarray) -> SkeletonGraph:
    """Endpoints, merged branch nodes and traced segments of a thinned skeleton."""
    skel = (np.asarray(skeleton) > 0).astype(np.uint8)
    deg = K.neighbour_counts(skel)
    node_of = -np.ones(skel.shape, dtype=np.int64)
    nodes: list[tuple[float, float, str]] = []
    node_pixels: list[list[tuple[int, int]]] = []

    branch_lab, n_branch = ndimage.label(deg >= 3, structure=np.ones((3, 3)))
    for lab in range(1, n_branch + 1):
        pix = list(zip(*np.nonzero(branch_lab == lab)))
        for p in pix:
            node_of[p] = len(nodes)
        ys, xs = zip(*pix)
        nodes.append((float(np.mean(xs)), float(np.mean(ys)), "branch"))
        node_pixels.append([(int(y), int(x)) for y, x in pix])
    for y, x in zip(*np.nonzero(deg == 1)):
        node_of[y, x] = len(nodes)
        nodes.append((float(x), float(y), "endpoint"))
        node_pixels.append([(int(y), int(x))])

    visited = np.zeros(skel.shape, dtype=bool)
    segments: list[Segment] = []
    seen_direct: set[tuple] = set()
    for nid, pix in enumerate(node_pixels):
        for p in pix:
            for q in _neighbours(skel, *p):
                if node_of[q] == nid:
                    continue
                if node_of[q] >= 0:
                    key = tuple(sorted((p, q)))
                    if key not in seen_direct:
                        seen_direct.add(key)
                        segments.append(Segment(nid, int(node_of[q]), _step(p, q), []))
                    continue
                if visited[q]:
                    continue
                path = [q]
                visited[q] = True
                length = _step(p, q)
                prev, cur = p, q
                end = -1
                while True:
                    nxt = [r for r in _neighbours(skel, *cur) if r != prev]
                    if not nxt:
                        break
                    # prefer a node pixel if we touch one, otherwise continue the path
                    node_hits = [r for r in nxt if node_of[r] >= 0]
                    r = node_hits[0] if node_hits else nxt[0]
                    length += _step(cur, r)
                    if node_of[r] >= 0:
                        end = int(node_of[r])
                        break
                    if visited[r]:
                        break
                    visited[r] = True
                    path.append(r)
                    prev, cur = cur, r
                if end < 0:
                    end = nid
                segments.append(Segment(nid, end, length, path))

    # closed loops with no node on them
    for y, x in zip(*np.nonzero((deg == 2) & ~visited)):
        if visited[y, x]:
            continue
        start = (int(y), int(x))
        nid = len(nodes)
        nodes.append((float(x), float(y), "loop"))
        node_pixels.append([start])
        node_of[start] = nid
        visited[start] = True
        prev, cur, length, path = None, start, 0.0, []
        while True:
            nxt = [r for r in _neighbours(skel, *cur) if r != prev and (r == start or not visited[r])]
            if not nxt:
                nb = [r for r in _neighbours(skel, *cur) if r == start]
                if nb and prev is not None:
                    length += _step(cur, start)
                break
            r = next((r for r in nxt if r != start), nxt[0])
            length += _step(cur, r)
            if r == start:
                break
            visited[r] = True
            path.append(r)
            prev, cur = cur, r
        segments.append(Segment(nid, nid, length, path))

    nodes, node_pixels, segments, folded = _merge_junctions(nodes, node_pixels, segments)
    n = len(nodes)
    if n:
        rows = [s.a for s in segments] + list(range(n))
        cols = [s.b for s in segments] + list(range(n))
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        _, comps = connected_components(adj, directed=False)
    else:
        comps = np.zeros(0, dtype=np.int64)
    return SkeletonGraph(skel, nodes, segments, comps, node_pixels, folded)


def _merge_junctions(nodes, node_pixels, segments, max_len: float = JUNCTION_MERGE_PX):
    """Contract very short branch-to-branch links (thinning splits oblique junctions in two)."""
    parent = list(range(len(nodes)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    short = []
    for k, s in enumerate(segments):
        if s.a != s.b and nodes[s.a][2] == "branch" and nodes[s.b][2] == "branch" and s.length <= max_len:
            ra, rb = find(s.a), find(s.b)
            if ra != rb:
                parent[ra] = rb
                short.append(k)
    if not short:
        return nodes, node_pixels, segments, 0.0
    roots = sorted({find(i) for i in range(len(nodes))})
    new_id = {r: i for i, r in enumerate(roots)}
    groups: dict[int, list[int]] = {}
    for i in range(len(nodes)):
        groups.setdefault(new_id[find(i)], []).append(i)
    new_nodes, new_pixels = [], []
    for gid in range(len(roots)):
        members = groups[gid]
        pix = [p for i in members for p in node_pixels[i]]
        if len(members) == 1:
            new_nodes.append(nodes[members[0]])
        else:
            new_nodes.append((float(np.mean([p[1] for p in pix])), float(np.mean([p[0] for p in pix])), "branch"))
        new_pixels.append(pix)
    skip = set(short)
    folded = float(sum(segments[k].length for k in short))
    new_segs = [Segment(new_id[find(s.a)], new_id[find(s.b)], s.length, s.pixels)
                for k, s in enumerate(segments) if k not in skip]
    return new_nodes, new_pixels, new_segs, folded


def prune_spurs(skeleton: np.ndarray, min_len: float = SPUR_PX, max_rounds: int = 10) -> np.ndarray:
    """Remove endpoint-to-branch segments shorter than ``min_len`` px."""
    skel = (np.asarray(skeleton) > 0).astype(np.uint8)
    for _ in range(max_rounds):
        g = build_graph(skel)
        kinds = [n[2] for n in g.nodes]
        removed = False
        for s in g.segments:
            ends = {kinds[s.a], kinds[s.b]}
            if ends == {"endpoint", "branch"} and s.length < min_len:
                tip = s.a if kinds[s.a] == "endpoint" else s.b
                for p in s.pixels + g.node_pixels[tip]:
                    skel[p] = 0
                removed = True
        if not removed:
            return skel
        skel = K.cleanup(skel)
    return skel


def analyse(mask: np.ndarray, spur_px: float = SPUR_PX) -> tuple[np.ndarray, SkeletonGraph]:
    skel = prune_spurs(skeletonize(mask), spur_px)
    return skel, build_graph(skel)


# ---------------------------------------------------------------------------
# biomarkers
# ---------------------------------------------------------------------------
def fibre_length_px(graph: SkeletonGraph) -> float:
    """Total centreline length; each free end adds half a pixel of extent."""
    return graph.total_length() + 0.5 * len(graph.endpoints())


def cnfl(graph: SkeletonGraph, geometry: Geometry) -> float:
    """Fibre length density, mm/mm^2."""
    return length_density(fibre_length_px(graph), geometry)


def length_density(length_px: float, geometry: Geometry) -> float:
    return length_px * geometry.pitch_um / 1000.0 / geometry.field_area_mm2


def isotropic_length_px(mask: np.ndarray, spur_px: float = SPUR_PX) -> float:
    """Fibre length averaged over the four 90-degree orientations of the mask.

    Two-subiteration thinning is slightly direction dependent, so a single
    skeleton's length moves by a fraction of a percent when the image is
    rotated. Each rotation of the input only permutes the four terms here, and
    ``fsum`` is exactly rounded, so the result is rotation invariant.
    """
    mask = np.asarray(mask) > 0
    return math.fsum(fibre_length_px(analyse(np.rot90(mask, k), spur_px)[1]) for k in range(4)) / 4.0


def trunk_components(graph: SkeletonGraph, geometry: Geometry, trunk_min_len_px: float | None = None) -> set[int]:
    thr = geometry.default_trunk_px() if trunk_min_len_px is None else trunk_min_len_px
    if thr < 0:
        raise ValueError("trunk_min_len_px must be >= 0")
    longest = graph.component_longest_paths()
    return {c for c in range(graph.n_components) if longest[c] + 1.0 >= thr}


def cnfd(graph: SkeletonGraph, geometry: Geometry, trunk_min_len_px: float | None = None) -> float:
    """Main trunks (components whose longest path reaches the threshold) per mm^2."""
    return len(trunk_components(graph, geometry, trunk_min_len_px)) / geometry.field_area_mm2


def branch_count(graph: SkeletonGraph, geometry: Geometry, trunk_min_len_px: float | None = None,
                 all_fibres: bool = False) -> int:
    branches = graph.branch_nodes()
    if all_fibres:
        return len(branches)
    trunks = trunk_components(graph, geometry, trunk_min_len_px)
    return sum(1 for b in branches if graph.components[b] in trunks)


def cnbd(graph: SkeletonGraph, geometry: Geometry, trunk_min_len_px: float | None = None,
         all_fibres: bool = False) -> float:
    """Branch points on main trunks per mm^2."""
    return branch_count(graph, geometry, trunk_min_len_px, all_fibres) / geometry.field_area_mm2


def cnfw(mask: np.ndarray, skeleton: np.ndarray, geometry: Geometry) -> float:
    """Mean fibre width in micrometres.

    At each skeleton pixel the distance to the fibre boundary is the Euclidean
    distance to the nearest background pixel minus half a pixel; the width is
    twice that.
    """
    skel = np.asarray(skeleton) > 0
    if not skel.any():
        raise UndefinedValueError("fibre width is undefined for an empty skeleton")
    edt = ndimage.distance_transform_edt(np.asarray(mask) > 0)
    half = edt[skel] - 0.5
    return float(np.mean(2.0 * half) * geometry.pitch_um)


def report(mask: np.ndarray, geometry: Geometry | None = None, trunk_min_len_px: float | None = None,
           spur_px: float | None = None, all_fibres: bool = False) -> BiomarkerReport:
    mask = np.asarray(mask) > 0
    geometry = geometry or Geometry.for_shape(mask.shape)
    spur_px = geometry.default_spur_px() if spur_px is None else spur_px
    skel, g = analyse(mask, spur_px)
    try:
        width = cnfw(mask, skel, geometry)
        defined = True
    except UndefinedValueError:
        width, defined = None, False
    area = geometry.field_area_mm2
    per_area = None
    if defined:
        per_area = float(np.sum(2.0 * (ndimage.distance_transform_edt(mask)[skel > 0] - 0.5))
                         * geometry.pitch_um / area / 1e3)
    return BiomarkerReport(
        cnfl=length_density(isotropic_length_px(mask, spur_px), geometry),
        cnfd=cnfd(g, geometry, trunk_min_len_px),
        cnbd=cnbd(g, geometry, trunk_min_len_px, all_fibres),
        cnfw=width,
        field_area=area,
        pixel_pitch=geometry.pitch_um,
        cnfw_per_area=per_area,
        cnfw_defined=defined,
    )


def otsu_threshold(img: np.ndarray, bins: int = 256) -> float:
    """Threshold maximising the between-class variance of the grey histogram."""
    hist, edges = np.histogram(np.asarray(img, dtype=np.float64), bins=bins, range=(0.0, 1.0))
    p = hist / max(hist.sum(), 1)
    centres = (edges[:-1] + edges[1:]) / 2
    w0 = np.cumsum(p)
    mu = np.cumsum(p * centres)
    w1 = 1.0 - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mu[-1] * w0 - mu) ** 2 / (w0 * w1)
    between[~np.isfinite(between)] = -1.0
    # thresholds inside an empty gap tie; take the middle of the first plateau
    best = np.flatnonzero(between >= between.max() * (1 - 1e-12))
    run = best[:np.argmax(np.diff(best) > 1) + 1] if np.any(np.diff(best) > 1) else best
    return float(edges[(run[0] + run[-1]) // 2 + 1])


def segment_image(img: np.ndarray) -> np.ndarray:
    """Bright-fibre mask of a grey image by Otsu thresholding."""
    img = np.asarray(img, dtype=np.float64)
    return (img > otsu_threshold(img)).astype(np.uint8)


METRICS = ("cnfl", "cnfd", "cnbd", "cnfw")
UNITS = {"cnfl": "mm/mm2", "cnfd": "no./mm2", "cnbd": "no./mm2", "cnfw": "um"}


def cohort_summary(reports: list[BiomarkerReport]) -> dict:
    """Mean and sample SD of each metric over a cohort (undefined widths skipped)."""
    out = {"n": len(reports)}
    for m in METRICS:
        vals = [getattr(r, m) for r in reports if getattr(r, m) is not None]
        if not vals:
            out[m] = {"mean": None, "sd": None, "n": 0}
            continue
        arr = np.asarray(vals, dtype=np.float64)
        out[m] = {"mean": float(arr.mean()), "sd": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
                  "n": int(arr.size)}
    return out


def format_table(rows: list[tuple[str, str, dict]]) -> str:
    """Aligned text table: group x source x four metrics (mean +- SD)."""
    head = ["Group", "Source", "CNFL (mm/mm2)", "CNFD (no./mm2)", "CNBD (no./mm2)", "CNFW (um)"]
    body = []
    for group, source, summ in rows:
        cells = [group, source]
        for m in METRICS:
            s = summ.get(m, {})
            cells.append("undefined" if s.get("mean") is None else f"{s['mean']:.2f} ± {s['sd']:.2f}")
        body.append(cells)
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(head, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in body]
    return "\n".join(lines)


def to_json(rep: BiomarkerReport) -> str:
    return json.dumps(rep.as_dict(), sort_keys=True)
