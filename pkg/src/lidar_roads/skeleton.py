"""Binary thinning and the pixel skeleton graph.

``thin`` reduces a binary raster to a one-pixel-wide skeleton with the
classic two-subiteration erosion scheme, guarded so that no 8-connected
component disappears outright.  ``build_graph`` lifts a thinned raster into
nodes (pixels of degree != 2 plus one anchor per pure cycle) and branches
(maximal chains of degree-2 pixels).  Pruning and endpoint bridging both
edit the underlying raster and rebuild, so a graph is always consistent
with its raster.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import Raster

logger = logging.getLogger(__name__)

_EIGHT = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
_BOX = np.ones((3, 3), dtype=np.int64)


@dataclass(frozen=True)
class SkeletonParams:
    """Pixel-unit knobs for skeleton cleanup."""

    max_bridge_gap: float = 20.0
    min_branch_len: int = 20

    def __post_init__(self) -> None:
        if self.max_bridge_gap < 0:
            raise ValueError("max_bridge_gap must be non-negative")
        if self.min_branch_len < 0:
            raise ValueError("min_branch_len must be non-negative")


def _require_binary(raster: Raster) -> np.ndarray:
    if not raster.is_binary():
        raise ValueError("expected a binary raster (values in {0, 1})")
    return raster.values > 0


def _thin_pass(img: np.ndarray, step: int) -> np.ndarray:
    """One parallel deletion subiteration; returns the surviving mask.

    Deletion conditions: the 8-neighbourhood crossing count C equals 1, the
    paired-neighbour count min(N1, N2) is 2 or 3, and the directional mask
    for the subiteration is clear.  Compared to the classic two-subiteration
    rules this erodes bar ends less aggressively and leaves diagonal chains
    without staircase knots.
    """
    p = np.pad(img, 1).astype(np.uint8)
    p2 = p[:-2, 1:-1]
    p3 = p[:-2, 2:]
    p4 = p[1:-1, 2:]
    p5 = p[2:, 2:]
    p6 = p[2:, 1:-1]
    p7 = p[2:, :-2]
    p8 = p[1:-1, :-2]
    p9 = p[:-2, :-2]
    c = (
        ((1 - p2) & (p3 | p4))
        + ((1 - p4) & (p5 | p6))
        + ((1 - p6) & (p7 | p8))
        + ((1 - p8) & (p9 | p2))
    )
    n1 = (p9 | p2) + (p3 | p4) + (p5 | p6) + (p7 | p8)
    n2 = (p2 | p3) + (p4 | p5) + (p6 | p7) + (p8 | p9)
    n = np.minimum(n1, n2)
    if step == 0:
        m = (p6 | p7 | (1 - p9)) & p8
    else:
        m = (p2 | p3 | (1 - p5)) & p4
    remove = img & (c == 1) & (n >= 2) & (n <= 3) & (m == 0)
    return img & ~remove


def _is_redundant(fg: set, pixel: tuple[int, int]) -> bool:
    """True when the pixel can go without changing topology or geometry.

    Conditions: at least two foreground neighbours (endpoints stay), at
    least one 4-adjacent background cell (nothing enclosed gets opened),
    and the foreground neighbours remain mutually 8-connected without the
    pixel.  Such pixels are staircase corners: the parallel erosion leaves
    them as spurious degree-3 knots on otherwise clean chains.
    """
    r, c = pixel
    ring = [(r + dr, c + dc) for dr, dc in _EIGHT if (r + dr, c + dc) in fg]
    if len(ring) < 2:
        return False
    if all((r + dr, c + dc) in fg for dr, dc in ((-1, 0), (0, 1), (1, 0), (0, -1))):
        return False
    seen = {ring[0]}
    stack = [ring[0]]
    while stack:
        ar, ac = stack.pop()
        for cell in ring:
            if cell not in seen and abs(cell[0] - ar) <= 1 and abs(cell[1] - ac) <= 1:
                seen.add(cell)
                stack.append(cell)
    return len(seen) == len(ring)


def _remove_redundant(img: np.ndarray) -> np.ndarray:
    """Delete redundant pixels sequentially (raster order) to a fixed point."""
    fg = {(int(r), int(c)) for r, c in zip(*np.nonzero(img))}
    changed = True
    while changed:
        changed = False
        for pixel in sorted(fg):
            if _is_redundant(fg, pixel):
                fg.discard(pixel)
                changed = True
    out = np.zeros_like(img)
    if fg:
        rows, cols = zip(*sorted(fg))
        out[list(rows), list(cols)] = True
    return out


def thin(binary: Raster) -> Raster:
    """Erode a binary raster to a unit-width skeleton.

    Runs the two-subiteration parallel thinning to a fixed point.  Two
    cleanups follow.  Should the parallel scheme ever delete a small
    component entirely, it is restored as a single representative pixel:
    the member with the largest distance to the background, ties broken by
    lowest (row, col).  Staircase corner pixels whose removal changes
    nothing topologically are then eliminated so that chains carry no
    spurious junctions.  The result is a subset of the input foreground,
    preserves the number of 8-connected components, and is idempotent.
    """
    img = _require_binary(binary)
    labels, n_comp = ndimage.label(img, structure=_BOX)
    out = img.copy()
    while True:
        nxt = _thin_pass(out, 0)
        nxt = _thin_pass(nxt, 1)
        if np.array_equal(nxt, out):
            break
        out = nxt
    if n_comp:
        survivors = np.unique(labels[out])
        lost = np.setdiff1d(np.arange(1, n_comp + 1), survivors, assume_unique=True)
        if len(lost):
            edt = ndimage.distance_transform_edt(img)
            for comp in lost:
                rows, cols = np.nonzero(labels == comp)
                depth = edt[rows, cols]
                order = np.lexsort((cols, rows, -depth))
                out[rows[order[0]], cols[order[0]]] = True
    out = _remove_redundant(out)
    return Raster(georef=binary.georef, values=out.astype(np.float32))


@dataclass(frozen=True)
class Branch:
    """Chain of pixels between two nodes, end nodes included.

    ``path[0] == path[-1]`` marks a closed loop anchored at that node.
    """

    path: tuple[tuple[int, int], ...]

    @property
    def a(self) -> tuple[int, int]:
        return self.path[0]

    @property
    def b(self) -> tuple[int, int]:
        return self.path[-1]

    @property
    def interior(self) -> tuple[tuple[int, int], ...]:
        return self.path[1:-1]

    @property
    def closed(self) -> bool:
        return self.path[0] == self.path[-1]

    def __len__(self) -> int:
        return len(self.path)


@dataclass(frozen=True)
class SkeletonGraph:
    """Nodes, branches and the raster they were built from."""

    raster: Raster
    nodes: dict[tuple[int, int], int]
    branches: tuple[Branch, ...]

    def endpoints(self) -> list[tuple[int, int]]:
        """Degree-1 node pixels, sorted."""
        return sorted(p for p, d in self.nodes.items() if d == 1)

    def junction_pixels(self) -> list[tuple[int, int]]:
        """Degree >= 3 node pixels, sorted."""
        return sorted(p for p, d in self.nodes.items() if d >= 3)

    def components(self) -> dict[tuple[int, int], int]:
        """Node pixel -> component id (0-based, ordered by smallest member)."""
        parent = {p: p for p in self.nodes}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for br in self.branches:
            ra, rb = find(br.a), find(br.b)
            if ra != rb:
                parent[ra] = rb
        roots = {p: find(p) for p in self.nodes}
        ordered = sorted(set(roots.values()))
        rank = {r: i for i, r in enumerate(ordered)}
        return {p: rank[r] for p, r in roots.items()}

    @property
    def n_components(self) -> int:
        comps = self.components()
        return len(set(comps.values())) if comps else 0


def _neighbors(pixel: tuple[int, int], fg: set) -> list[tuple[int, int]]:
    r, c = pixel
    return [(r + dr, c + dc) for dr, dc in _EIGHT if (r + dr, c + dc) in fg]


def build_graph(skeleton: Raster) -> SkeletonGraph:
    """Decompose a thinned raster into nodes and branch chains.

    Nodes are pixels whose 8-neighbourhood degree differs from 2; every
    maximal chain of degree-2 pixels becomes one branch joining two nodes.
    A pure cycle (all pixels degree 2) has no natural node, so its lowest
    (row, col) pixel is promoted to an anchor carrying a closed branch.
    Each foreground pixel is accounted exactly once as either a node or a
    branch interior pixel.

    Raises ValueError when the raster contains a solid 3x3 block, the
    signature of un-thinned input.
    """
    img = _require_binary(skeleton)
    if bool(ndimage.minimum_filter(img, size=3)[1:-1, 1:-1].any()):
        raise ValueError("raster is not thinned (solid 3x3 block); run thin() first")
    rows, cols = np.nonzero(img)
    fg = set(zip(rows.tolist(), cols.tolist()))
    if not fg:
        return SkeletonGraph(raster=skeleton, nodes={}, branches=())
    counts = ndimage.convolve(img.astype(np.int64), _BOX, mode="constant") - img
    degree = {p: int(counts[p]) for p in fg}
    nodes = {p: d for p, d in degree.items() if d != 2}

    used: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    interior_seen: set[tuple[int, int]] = set()
    branches: list[Branch] = []

    def walk(start, first):
        path = [start, first]
        prev, cur = start, first
        while cur not in nodes:
            nbrs = _neighbors(cur, fg)
            nxt = nbrs[0] if nbrs[1] == prev else nbrs[1]
            path.append(nxt)
            prev, cur = cur, nxt
        return path

    for node in sorted(nodes):
        for nb in sorted(_neighbors(node, fg)):
            if (node, nb) in used or nb in interior_seen:
                continue
            if nb in nodes:
                key = ((node, nb), (nb, node))
                used.update(key)
                branches.append(Branch(path=(node, nb)))
                continue
            path = walk(node, nb)
            used.add((node, path[1]))
            used.add((path[-1], path[-2]))
            interior_seen.update(path[1:-1])
            branches.append(Branch(path=tuple(path)))

    leftovers = sorted(p for p in fg if p not in nodes and p not in interior_seen)
    claimed = set()
    for anchor in leftovers:
        if anchor in claimed:
            continue
        first = sorted(_neighbors(anchor, fg))[0]
        path = [anchor, first]
        prev, cur = anchor, first
        while cur != anchor:
            nbrs = _neighbors(cur, fg)
            nxt = nbrs[0] if nbrs[1] == prev else nbrs[1]
            path.append(nxt)
            prev, cur = cur, nxt
        nodes[anchor] = degree[anchor]
        claimed.update(path)
        branches.append(Branch(path=tuple(path)))

    return SkeletonGraph(raster=skeleton, nodes=nodes, branches=tuple(branches))


def detect_junctions(skeleton: Raster) -> list[tuple[int, int]]:
    """Pixels that are foreground with >= 3 foreground neighbours in 3x3.

    This is the raw per-pixel rule; adjacent detections around a crossing
    typically form a small cluster (see ``cluster_junctions``).
    """
    img = _require_binary(skeleton)
    counts = ndimage.convolve(img.astype(np.int64), _BOX, mode="constant") - img
    hits = img & (counts >= 3)
    rows, cols = np.nonzero(hits)
    return sorted(zip(rows.tolist(), cols.tolist()))


def cluster_junctions(pixels: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Merge 8-adjacent junction detections, one representative per cluster.

    The representative is the member closest to the cluster centroid, ties
    broken by lowest (row, col).
    """
    remaining = set(pixels)
    reps = []
    while remaining:
        seed = min(remaining)
        cluster = {seed}
        frontier = [seed]
        remaining.discard(seed)
        while frontier:
            r, c = frontier.pop()
            for dr, dc in _EIGHT:
                q = (r + dr, c + dc)
                if q in remaining:
                    remaining.discard(q)
                    cluster.add(q)
                    frontier.append(q)
        arr = np.array(sorted(cluster), dtype=np.float64)
        centroid = arr.mean(axis=0)
        d2 = ((arr - centroid) ** 2).sum(axis=1)
        best = int(np.lexsort((arr[:, 1], arr[:, 0], d2))[0])
        reps.append((int(arr[best, 0]), int(arr[best, 1])))
    return sorted(reps)


def _bresenham(a: tuple[int, int], b: tuple[int, int]) -> list[tuple[int, int]]:
    """Integer line from a to b, inclusive."""
    r0, c0 = a
    r1, c1 = b
    dc = abs(c1 - c0)
    dr = -abs(r1 - r0)
    sc = 1 if c0 < c1 else -1
    sr = 1 if r0 < r1 else -1
    err = dc + dr
    out = []
    r, c = r0, c0
    while True:
        out.append((r, c))
        if (r, c) == (r1, c1):
            break
        e2 = 2 * err
        if e2 >= dr:
            err += dr
            c += sc
        if e2 <= dc:
            err += dc
            r += sr
    return out


def prune_branches(graph: SkeletonGraph, min_len: int) -> SkeletonGraph:
    """Iteratively remove endpoint-terminating branches shorter than min_len.

    A branch qualifies when it is open, at least one of its ends is an
    endpoint (degree <= 1), and the pixels that would disappear (interior
    plus every non-junction end) number fewer than ``min_len``.  Isolated
    single pixels are removed on the same basis.  Closed loops and
    junction-to-junction branches are never pruned.  Removal repeats until
    a fixed point, so spurs exposed by earlier rounds get trimmed too.
    """
    if min_len <= 0:
        return graph
    current = graph
    while True:
        img = current.raster.values > 0
        doomed: set[tuple[int, int]] = set()
        for br in current.branches:
            if br.closed:
                continue
            deg_a = current.nodes[br.a]
            deg_b = current.nodes[br.b]
            if deg_a > 1 and deg_b > 1:
                continue
            drop = set(br.interior)
            if deg_a <= 1:
                drop.add(br.a)
            if deg_b <= 1:
                drop.add(br.b)
            if len(drop) < min_len:
                doomed.update(drop)
        branch_pixels = {p for br in current.branches for p in br.path}
        for p, d in current.nodes.items():
            if d == 0 and p not in branch_pixels and 1 < min_len:
                doomed.add(p)
        if not doomed:
            return current
        out = img.copy()
        for r, c in doomed:
            out[r, c] = False
        current = build_graph(
            Raster(georef=current.raster.georef, values=out.astype(np.float32))
        )


def bridge_endpoints(graph: SkeletonGraph, max_gap: float) -> SkeletonGraph:
    """Connect endpoints of different components across small gaps.

    Candidate pairs are endpoints from distinct connected components with
    pixel distance <= ``max_gap``.  Pairs are taken greedily in ascending
    distance (ties by pixel order); each endpoint is used at most once and
    a pair is skipped when earlier bridges already joined its components.
    Accepted pairs are drawn as straight pixel segments, the raster is
    re-thinned to keep unit width, and the graph is rebuilt.  The component
    count never increases.
    """
    comps = graph.components()
    endpoints = graph.endpoints()
    if len(endpoints) < 2:
        return graph
    candidates = []
    for i, p in enumerate(endpoints):
        for q in endpoints[i + 1:]:
            if comps[p] == comps[q]:
                continue
            dist = float(np.hypot(p[0] - q[0], p[1] - q[1]))
            if dist <= max_gap:
                candidates.append((dist, p, q))
    if not candidates:
        return graph
    candidates.sort()
    parent = list(range(max(comps.values()) + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    used: set[tuple[int, int]] = set()
    img = graph.raster.values > 0
    out = img.copy()
    n_bridges = 0
    for dist, p, q in candidates:
        if p in used or q in used:
            continue
        ra, rb = find(comps[p]), find(comps[q])
        if ra == rb:
            continue
        for r, c in _bresenham(p, q):
            out[r, c] = True
        parent[ra] = rb
        used.update((p, q))
        n_bridges += 1
    if n_bridges == 0:
        return graph
    logger.info("bridged %d endpoint gaps (max_gap=%.1f px)", n_bridges, max_gap)
    bridged = Raster(georef=graph.raster.georef, values=out.astype(np.float32))
    return build_graph(thin(bridged))


def graph_to_json(graph: SkeletonGraph) -> dict:
    """Plain-dict form of the graph: nodes and branch pixel chains.

    Pixel coordinates are (row, col) integers into ``graph.raster``.
    """
    return {
        "width": graph.raster.georef.width,
        "height": graph.raster.georef.height,
        "nodes": [
            {"row": int(r), "col": int(c), "degree": int(graph.nodes[(r, c)])}
            for r, c in sorted(graph.nodes)
        ],
        "branches": [
            {
                "closed": br.closed,
                "pixels": [[int(r), int(c)] for r, c in br.path],
            }
            for br in graph.branches
        ],
    }
