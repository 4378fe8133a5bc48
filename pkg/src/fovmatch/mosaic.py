"""Mosaicking of unordered overlapping frames.

Adjacency is discovered in PCA score space (3 candidate neighbors per
frame, the one with the highest identity-alignment MI is kept), then a
spanning tree of pairwise MI registrations is composed into panorama
placements. Blending is feathered averaging; seam quality is out of
scope.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DisconnectedGraph, FovMatchError, TooFewImages
from .image import AffineTransform, RasterImage, resample, to_vector, warp_affine
from .mi import RegistrationSettings, joint_histogram, mutual_information, register
from .pca import fit_randomized

N_CANDIDATES = 3
PROBE_MI_FLOOR = 0.05


@dataclass(frozen=True)
class OverlapEdge:
    i: int
    j: int
    mi: float


@dataclass(frozen=True)
class OverlapGraph:
    nodes: list[int]
    edges: list[OverlapEdge]
    anchor: int
    parents: dict[int, int | None]              # spanning tree over accepted edges
    candidates: dict[int, list[tuple[int, float]]] = field(default_factory=dict)

    def neighbors(self, i: int) -> list[int]:
        out = []
        for e in self.edges:
            if e.i == i:
                out.append(e.j)
            elif e.j == i:
                out.append(e.i)
        return out

    def to_records(self) -> str:
        """Audit lines: i,j,mi,accepted per candidate pair."""
        accepted = {(min(e.i, e.j), max(e.i, e.j)) for e in self.edges}
        lines = ["i,j,mi,accepted"]
        for i, cands in sorted(self.candidates.items()):
            for j, mi in cands:
                flag = int((min(i, j), max(i, j)) in accepted)
                lines.append(f"{i},{j},{mi:.10g},{flag}")
        return "\n".join(lines) + "\n"


def single_image_graph() -> OverlapGraph:
    return OverlapGraph(nodes=[0], edges=[], anchor=0, parents={0: None})


def _spanning_tree(nodes, edges, anchor):
    adj = {i: [] for i in nodes}
    for e in edges:
        adj[e.i].append(e.j)
        adj[e.j].append(e.i)
    parents = {anchor: None}
    queue = deque([anchor])
    while queue:
        u = queue.popleft()
        for v in sorted(adj[u]):
            if v not in parents:
                parents[v] = u
                queue.append(v)
    return parents


def build_overlap_graph(
    images: list[RasterImage],
    l: int = 20,
    seed: int = 0,
    bins: int = 32,
) -> OverlapGraph:
    """Discover which frames overlap via PCA neighbors validated by MI."""
    n = len(images)
    if n < 2:
        raise TooFewImages(f"need at least 2 images, got {n}")
    w, h = images[0].width, images[0].height
    frames = [im if (im.width, im.height) == (w, h) else resample(im, w, h) for im in images]
    X = np.array([to_vector(im) for im in frames])
    model = fit_randomized(X, min(l, n, X.shape[1]), seed=seed)

    def identity_mi(a: RasterImage, b: RasterImage) -> float:
        return mutual_information(joint_histogram(a, b, bins=bins))

    candidates: dict[int, list[tuple[int, float]]] = {}
    best: dict[int, tuple[int, float]] = {}
    k = min(N_CANDIDATES + 1, n)
    for i in range(n):
        neigh = [j for j, _ in model.nearest(model.components[i], k=k) if j != i][:N_CANDIDATES]
        scored = [(j, identity_mi(frames[i], frames[j])) for j in neigh]
        candidates[i] = scored
        best[i] = max(scored, key=lambda t: t[1])

    edge_map: dict[tuple[int, int], float] = {}
    for i, (j, mi) in best.items():
        key = (min(i, j), max(i, j))
        edge_map[key] = max(edge_map.get(key, -np.inf), mi)
    edges = [OverlapEdge(i, j, mi) for (i, j), mi in sorted(edge_map.items())]

    degree = {i: 0 for i in range(n)}
    for e in edges:
        degree[e.i] += 1
        degree[e.j] += 1
    anchor = max(degree, key=lambda i: (degree[i], -i))
    parents = _spanning_tree(list(range(n)), edges, anchor)
    return OverlapGraph(
        nodes=list(range(n)),
        edges=edges,
        anchor=anchor,
        parents=parents,
        candidates=candidates,
    )


@dataclass(frozen=True)
class StitchSettings:
    bins: int = 32
    registration: RegistrationSettings = field(default_factory=RegistrationSettings)


@dataclass(frozen=True)
class Panorama:
    canvas: RasterImage
    placements: dict[int, AffineTransform]  # image -> canvas coordinates
    coverage_mask: np.ndarray
    unplaced: list[int] = field(default_factory=list)


def _probe_init(child: RasterImage, parent: RasterImage, bins: int) -> AffineTransform:
    """Identity init, or the best of a 3x3 translation probe when the
    identity-alignment MI is too weak to trust."""

    def mi_at(t: AffineTransform) -> float:
        warped, mask = warp_affine(child, t, parent.width, parent.height)
        if not mask.any():
            return -np.inf
        try:
            return mutual_information(joint_histogram(parent, warped, mask, bins=bins))
        except FovMatchError:
            return -np.inf

    identity = AffineTransform.identity()
    if mi_at(identity) >= PROBE_MI_FLOOR:
        return identity
    dx = 0.25 * child.width
    dy = 0.25 * child.height
    grid = [
        AffineTransform.translation(ix * dx, iy * dy)
        for iy in (-1, 0, 1)
        for ix in (-1, 0, 1)
    ]
    return max(grid, key=mi_at)


def stitch(
    images: list[RasterImage],
    graph: OverlapGraph,
    settings: StitchSettings | None = None,
) -> Panorama:
    """Register each frame to its spanning-tree parent and compose a panorama."""
    cfg = settings or StitchSettings()
    unreachable = [i for i in graph.nodes if i not in graph.parents]
    if unreachable:
        raise DisconnectedGraph(unreachable)

    # world placements: anchor at identity, children composed through parents
    world: dict[int, AffineTransform] = {graph.anchor: AffineTransform.identity()}
    unplaced: list[int] = []
    children: dict[int, list[int]] = {}
    for v, p in graph.parents.items():
        if p is not None:
            children.setdefault(p, []).append(v)

    queue = deque([graph.anchor])
    skipped_subtree = set()
    while queue:
        u = queue.popleft()
        for v in sorted(children.get(u, [])):
            if u in skipped_subtree:
                skipped_subtree.add(v)
                unplaced.append(v)
                queue.append(v)
                continue
            try:
                init = _probe_init(images[v], images[u], cfg.bins)
                res = register(images[v], images[u], init, cfg.registration)
                # res.transform maps parent coords -> child coords; a child
                # point p lands in parent coords at transform^-1(p)
                world[v] = world[u].compose(res.transform.invert())
            except FovMatchError:
                skipped_subtree.add(v)
                unplaced.append(v)
            queue.append(v)

    corners = []
    for i, t in world.items():
        im = images[i]
        pts = np.array(
            [[0, 0], [im.width - 1, 0], [0, im.height - 1], [im.width - 1, im.height - 1]],
            dtype=np.float64,
        )
        corners.append(t.apply(pts))
    allc = np.vstack(corners)
    ox, oy = np.floor(allc.min(axis=0))
    cw = int(np.ceil(allc[:, 0].max() - ox)) + 1
    ch = int(np.ceil(allc[:, 1].max() - oy)) + 1

    num = np.zeros((ch, cw))
    den = np.zeros((ch, cw))
    placements: dict[int, AffineTransform] = {}
    offset = AffineTransform.translation(ox, oy)
    for i, t in world.items():
        im = images[i]
        placement = AffineTransform.translation(-ox, -oy).compose(t)
        placements[i] = placement
        sampling = t.invert().compose(offset)  # canvas pixel -> image coords
        warped, mask = warp_affine(im, sampling, cw, ch)
        xs = np.arange(im.width)
        ys = np.arange(im.height)
        feat = np.minimum.outer(np.minimum(ys + 1, im.height - ys), np.minimum(xs + 1, im.width - xs)).astype(np.float64)
        wimg, _ = warp_affine(RasterImage(feat / feat.max()), sampling, cw, ch)
        wvals = wimg.pixels * mask
        num += wvals * warped.pixels
        den += wvals
    canvas = np.where(den > 0, num / np.maximum(den, 1e-12), 0.0)
    return Panorama(
        canvas=RasterImage(canvas),
        placements=placements,
        coverage_mask=den > 0,
        unplaced=sorted(unplaced),
    )


def placements_sidecar(panorama: Panorama) -> str:
    """Per-image placement parameters as delimited text."""
    lines = ["image,a11,a12,a21,a22,tx,ty"]
    for i in sorted(panorama.placements):
        p = panorama.placements[i].as_params()
        lines.append(str(i) + "," + ",".join(f"{v:.10g}" for v in p))
    return "\n".join(lines) + "\n"
