"""Computational domain: truncated box, obstacle masks, regions, geodesics.

The obstacle family of interest is an annulus pierced by a narrow channel
along the positive first axis.  With gamma = N/(N-1) the channel half-width
is eps^gamma through the annulus bulk, flaring to 2 eps^gamma inside a
collar of depth eps^gamma/4 at the annulus rims, so the four defining
containment properties of the family hold simultaneously.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph

from .errors import ConfigError, ResolutionError

__all__ = [
    "ObstacleSpec",
    "GridDomain",
    "DistanceField",
    "obstacle_contains",
    "build_domain",
    "build_obstacle_mask",
    "classify_regions",
    "geodesic_distances",
    "REGION_NAMES",
    "EDGE_TEMPLATE_2D",
]

REGION_NAMES = {0: "obstacle", 1: "inner_ball", 2: "channel", 3: "outer_field"}

# Radius-2 neighbor template: 8 axis/diagonal moves plus 8 knight moves.
EDGE_TEMPLATE_2D = np.array(
    [(1, 0), (-1, 0), (0, 1), (0, -1),
     (1, 1), (1, -1), (-1, 1), (-1, -1),
     (2, 1), (2, -1), (-2, 1), (-2, -1),
     (1, 2), (1, -2), (-1, 2), (-1, -2)]
)


@dataclass(frozen=True)
class ObstacleSpec:
    """Parameters generating the obstacle set.

    kind: one of none | ball | annulus | channel_annulus.
    r0/r1: inner/outer radii (ball uses r0 only).
    epsilon: channel scale parameter; smoothing: rim-collar depth, default
    eps^gamma / 4.
    """

    kind: str
    r0: float = 0.0
    r1: float = 0.0
    epsilon: float = 0.0
    smoothing: Optional[float] = None

    def channel_exponent(self, dimension):
        return dimension / (dimension - 1.0)

    def channel_half_width(self, dimension):
        return self.epsilon ** self.channel_exponent(dimension)

    def validate(self, dimension, r0_star=None):
        if self.kind not in ("none", "ball", "annulus", "channel_annulus"):
            raise ConfigError(f"unknown obstacle kind {self.kind!r}")
        if self.kind == "ball" and self.r0 <= 0:
            raise ConfigError("ball obstacle needs r0 > 0")
        if self.kind in ("annulus", "channel_annulus"):
            if not 0 < self.r0 < self.r1:
                raise ConfigError("annular obstacle needs 0 < r0 < r1")
        if self.kind == "channel_annulus":
            if self.r1 <= 2.0:
                raise ConfigError(
                    "channel obstacle requires outer radius r1 > 2"
                )
            if not 0.0 < self.epsilon < 1.0:
                raise ConfigError("channel obstacle requires 0 < epsilon < 1")
            if r0_star is not None and self.r0 >= r0_star:
                raise ConfigError(
                    f"inner radius r0={self.r0} must be below the admissible "
                    f"threshold r0*={r0_star:.6g} for this kernel/reaction pair"
                )


def obstacle_contains(spec, points, dimension):
    """Pointwise membership test for the obstacle set (the set-definition
    oracle; masks are rasterized with exactly this predicate)."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    r = np.linalg.norm(pts, axis=1)
    if spec.kind == "none":
        out = np.zeros(len(pts), dtype=bool)
    elif spec.kind == "ball":
        out = r <= spec.r0
    elif spec.kind == "annulus":
        out = (spec.r0 <= r) & (r <= spec.r1)
    elif spec.kind == "channel_annulus":
        gamma = spec.channel_exponent(dimension)
        w_in = spec.epsilon ** gamma
        d = spec.smoothing if spec.smoothing is not None else w_in / 4.0
        in_annulus = (spec.r0 <= r) & (r <= spec.r1)
        flare = np.maximum(1.0 - (r - spec.r0) / d, 1.0 - (spec.r1 - r) / d)
        half_width = w_in * (1.0 + np.clip(flare, 0.0, 1.0))
        x1 = pts[:, 0]
        xp = np.linalg.norm(pts[:, 1:], axis=1)
        out = in_annulus & ((x1 <= 0.0) | (xp >= half_width))
    else:
        raise ConfigError(f"unknown obstacle kind {spec.kind!r}")
    return bool(out[0]) if single else out


@dataclass
class GridDomain:
    """Uniform cell-centered grid over a (possibly asymmetric) box.

    Cell centers sit on the half-integer lattice (m + 1/2) h per axis, so a
    symmetric extent request produces a reflection-symmetric center set.
    ``active`` marks cells outside the obstacle, ``far`` the active collar
    (one kernel support wide) along the box boundary where the state is
    pinned to 1.
    """

    dimension: int
    spacing: float
    lo_index: np.ndarray                # integer m of the first center per axis
    shape: tuple
    active: np.ndarray = field(repr=False)
    far: np.ndarray = field(repr=False)
    spec: Optional[ObstacleSpec] = None

    @property
    def axes(self):
        h = self.spacing
        return [
            (self.lo_index[d] + 0.5 + np.arange(self.shape[d])) * h
            for d in range(self.dimension)
        ]

    @property
    def bounds(self):
        h = self.spacing
        lo = np.array([(self.lo_index[d]) * h for d in range(self.dimension)])
        hi = np.array(
            [(self.lo_index[d] + self.shape[d]) * h for d in range(self.dimension)]
        )
        return lo, hi

    @property
    def box_half_width(self):
        lo, hi = self.bounds
        return float(np.max(np.abs(np.concatenate([lo, hi]))))

    @property
    def n_cells(self):
        return int(np.prod(self.shape))

    def centers(self, axis=None):
        if axis is not None:
            return self.axes[axis]
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def radius_field(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.sqrt(sum(m ** 2 for m in mesh))

    def interior_mask(self):
        return self.active & ~self.far


def _center_range(lo, hi, h):
    m_lo = math.ceil(lo / h - 0.5 - 1e-12)
    m_hi = math.floor(hi / h - 0.5 + 1e-12)
    if m_hi < m_lo:
        raise ConfigError("empty grid extent")
    return m_lo, m_hi - m_lo + 1


def build_domain(spec, dimension, spacing, extent_lo, extent_hi,
                 far_width=0.0, r0_star=None, min_channel_cells=4):
    """Rasterize the obstacle onto a cell-centered grid.

    extent_lo/extent_hi: per-axis box bounds (scalars broadcast).  far_width
    is the collar width (usually one kernel support radius) flagged in
    ``far``.  Raises ResolutionError when a channel would be thinner than
    ``min_channel_cells`` cells.
    """
    h = float(spacing)
    if h <= 0:
        raise ConfigError("spacing must be positive")
    lo = np.broadcast_to(np.asarray(extent_lo, dtype=float), (dimension,))
    hi = np.broadcast_to(np.asarray(extent_hi, dtype=float), (dimension,))
    if spec is not None:
        spec.validate(dimension, r0_star=r0_star)
        if spec.kind == "channel_annulus":
            gamma = spec.channel_exponent(dimension)
            if h > spec.epsilon ** gamma / min_channel_cells:
                raise ResolutionError(
                    f"spacing {h} leaves the channel thinner than "
                    f"{min_channel_cells} cells (need h <= eps^gamma/4 = "
                    f"{spec.epsilon ** gamma / min_channel_cells:.6g})"
                )
    lo_index = np.empty(dimension, dtype=int)
    shape = []
    for d in range(dimension):
        m0, n = _center_range(lo[d], hi[d], h)
        lo_index[d] = m0
        shape.append(n)
    shape = tuple(shape)
    dom = GridDomain(
        dimension=dimension, spacing=h, lo_index=lo_index, shape=shape,
        active=np.ones(shape, dtype=bool), far=np.zeros(shape, dtype=bool),
        spec=spec,
    )
    if spec is not None and spec.kind != "none":
        pts = dom.centers().reshape(-1, dimension)
        inside = obstacle_contains(spec, pts, dimension).reshape(shape)
        dom.active = ~inside
    if far_width > 0:
        blo, bhi = dom.bounds
        mesh = np.meshgrid(*dom.axes, indexing="ij")
        edge_dist = np.min(
            [m - blo[d] for d, m in enumerate(mesh)]
            + [bhi[d] - m for d, m in enumerate(mesh)],
            axis=0,
        )
        dom.far = dom.active & (edge_dist < far_width)
    return dom


def build_obstacle_mask(spec, dimension, spacing, box_half_width,
                        far_width=0.0, r0_star=None):
    """Symmetric-box convenience wrapper around :func:`build_domain`."""
    w = float(box_half_width)
    return build_domain(spec, dimension, spacing, -w, w,
                        far_width=far_width, r0_star=r0_star)


def classify_regions(domain, spec=None):
    """Label cells as obstacle / inner ball / channel slab / outer field.

    The channel slab is {r0 < x1 < r1, |x'| < eps^gamma} intersected with
    the active set.
    """
    spec = spec or domain.spec
    if spec is None or spec.kind != "channel_annulus":
        raise ConfigError("region classification needs a channel obstacle")
    mesh = np.meshgrid(*domain.axes, indexing="ij")
    r = np.sqrt(sum(m ** 2 for m in mesh))
    x1 = mesh[0]
    xp = np.sqrt(sum(m ** 2 for m in mesh[1:])) if domain.dimension > 1 else 0 * x1
    w_in = spec.channel_half_width(domain.dimension)
    labels = np.full(domain.shape, 3, dtype=np.int8)
    labels[~domain.active] = 0
    ball = domain.active & (r < spec.r0)
    labels[ball] = 1
    channel = (
        domain.active & ~ball
        & (x1 > spec.r0) & (x1 < spec.r1) & (xp < w_in)
    )
    labels[channel] = 2
    return labels


@dataclass
class DistanceField:
    """Within-domain shortest-path distances from one source cell.

    Distances use the 16-neighbor graph restricted to active cells
    (edge length = Euclidean offset length) and are only computed out to
    ``truncation_radius``; unreachable or farther cells hold +inf.
    """

    source: tuple
    distances: np.ndarray = field(repr=False)
    truncation_radius: float = math.inf


_window_edge_cache = {}


def _window_edges(win_shape):
    """Intra-window directed edges for the 16-neighbor template, cached."""
    key = win_shape
    if key in _window_edge_cache:
        return _window_edge_cache[key]
    ni, nj = win_shape
    idx = np.arange(ni * nj).reshape(ni, nj)
    rows, cols, lens = [], [], []
    for di, dj in EDGE_TEMPLATE_2D:
        i0, i1 = max(0, -di), min(ni, ni - di)
        j0, j1 = max(0, -dj), min(nj, nj - dj)
        if i0 >= i1 or j0 >= j1:
            continue
        src = idx[i0:i1, j0:j1].ravel()
        dst = idx[i0 + di:i1 + di, j0 + dj:j1 + dj].ravel()
        rows.append(src)
        cols.append(dst)
        lens.append(np.full(src.size, math.hypot(di, dj)))
    out = (np.concatenate(rows), np.concatenate(cols), np.concatenate(lens))
    _window_edge_cache[key] = out
    return out


def _dijkstra_window(active_win, center_flat, limit_cells):
    """Graph distances (in cell units) from one cell of a boolean window."""
    ok = active_win.ravel()
    rows, cols, lens = _window_edges(active_win.shape)
    keep = ok[rows] & ok[cols]
    n = ok.size
    g = sparse.csr_matrix(
        (lens[keep], (rows[keep], cols[keep])), shape=(n, n)
    )
    dist = csgraph.dijkstra(g, directed=False, indices=center_flat,
                            limit=limit_cells)
    return dist.reshape(active_win.shape)


def free_template_distances(radius_cells):
    """Graph distances on an unobstructed window, center to every cell."""
    w = 2 * radius_cells + 1
    win = np.ones((w, w), dtype=bool)
    center = (radius_cells) * w + radius_cells
    return _dijkstra_window(win, center, math.inf)


def geodesic_distances(domain, source, truncation_radius=None):
    """Truncated within-domain distances from ``source`` (an index tuple).

    Distances are physical lengths (cell-unit graph distance times spacing).
    """
    if domain.dimension != 2:
        raise ConfigError("geodesic distances implemented for 2-d grids")
    src = tuple(int(i) for i in source)
    if not domain.active[src]:
        raise ConfigError(f"source cell {src} lies inside the obstacle")
    h = domain.spacing
    if truncation_radius is None:
        truncation_radius = h * max(domain.shape)
    rad_cells = int(math.ceil(truncation_radius / h)) + 2
    ni, nj = domain.shape
    i0, i1 = max(0, src[0] - rad_cells), min(ni, src[0] + rad_cells + 1)
    j0, j1 = max(0, src[1] - rad_cells), min(nj, src[1] + rad_cells + 1)
    win = domain.active[i0:i1, j0:j1]
    cflat = (src[0] - i0) * win.shape[1] + (src[1] - j0)
    d_win = _dijkstra_window(win, cflat, truncation_radius / h + 1e-9)
    full = np.full(domain.shape, math.inf)
    full[i0:i1, j0:j1] = d_win * h
    full[full > truncation_radius + 1e-12] = math.inf
    return DistanceField(source=src, distances=full,
                         truncation_radius=float(truncation_radius))


def bellman_ford_distances(active, source, spacing=1.0):
    """Reference shortest-path oracle: plain relaxation over all edges until
    stable.  O(V E) — only for small test grids."""
    ni, nj = active.shape
    dist = np.full((ni, nj), math.inf)
    dist[source] = 0.0
    changed = True
    while changed:
        changed = False
        for di, dj in EDGE_TEMPLATE_2D:
            w = math.hypot(di, dj) * spacing
            src_i = slice(max(0, -di), min(ni, ni - di))
            src_j = slice(max(0, -dj), min(nj, nj - dj))
            dst_i = slice(max(0, di), min(ni, ni + di))
            dst_j = slice(max(0, dj), min(nj, nj + dj))
            cand = dist[src_i, src_j] + w
            mask = active[src_i, src_j] & active[dst_i, dst_j]
            better = mask & (cand < dist[dst_i, dst_j] - 1e-15)
            if np.any(better):
                block = dist[dst_i, dst_j]
                block[better] = cand[better]
                dist[dst_i, dst_j] = block
                changed = True
    return dist


def connected_through(domain, cell_a, cell_b):
    """True when two active cells lie in the same 8-connected component."""
    labels, _ = ndimage.label(domain.active, structure=np.ones((3, 3), dtype=int))
    return labels[tuple(cell_a)] == labels[tuple(cell_b)] != 0
