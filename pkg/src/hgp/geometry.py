"""Planar geometry types, GeoJSON/WKT ingestion, and neighbor derivation.

Geometries are closed sets in the plane: points, filled polygons (with
holes), and multipolygons. Coordinates are taken as planar map units; no
CRS transformation is performed. All values are immutable after
construction and safe to share across threads.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
import pandas as pd

from .errors import GeometryError, ParseError

_BOUNDARY_RTOL = 1e-12

# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Point:
    """A single location; equivalently a one-vertex degenerate polygon."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"point coordinates must be finite, got ({self.x}, {self.y})")

    @property
    def coords(self) -> np.ndarray:
        return np.array([self.x, self.y])


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def signed_area(ring: np.ndarray) -> float:
    """Shoelace area; positive for counterclockwise vertex order."""
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _normalize_ring(coords, counterclockwise: bool) -> np.ndarray:
    ring = np.asarray(coords, dtype=float)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise GeometryError("a ring must be a sequence of (x, y) pairs")
    if not np.all(np.isfinite(ring)):
        raise GeometryError("ring coordinates must be finite")
    # implicit closure: drop a repeated final vertex, then consecutive dupes
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(ring) > 1:
        keep = np.ones(len(ring), dtype=bool)
        keep[1:] = np.any(ring[1:] != ring[:-1], axis=1)
        ring = ring[keep]
    if len(np.unique(ring, axis=0)) < 3:
        raise GeometryError(f"ring needs at least 3 distinct vertices, got {len(ring)}")
    area = signed_area(ring)
    if (area > 0) != counterclockwise and area != 0:
        # reverse orientation but keep the original first vertex first
        ring = np.roll(ring[::-1], 1, axis=0)
    return _freeze(ring)


@dataclass(frozen=True, eq=False)
class Polygon:
    """A filled closed region bounded by an exterior ring, minus open holes.

    Rings are stored unclosed (first vertex != last); the exterior runs
    counterclockwise and holes clockwise regardless of input order.
    """

    exterior: np.ndarray
    holes: tuple = ()

    def __init__(self, exterior, holes: Iterable = ()):
        ext = _normalize_ring(exterior, counterclockwise=True)
        hs = tuple(_normalize_ring(h, counterclockwise=False) for h in holes)
        for h in hs:
            if not _points_in_rings(h[:1], [ext])[0]:
                raise GeometryError("hole lies outside the exterior ring")
        object.__setattr__(self, "exterior", ext)
        object.__setattr__(self, "holes", hs)

    @property
    def rings(self) -> tuple:
        return (self.exterior,) + self.holes


@dataclass(frozen=True, eq=False)
class MultiPolygon:
    """A union of pairwise interior-disjoint polygons."""

    parts: tuple

    def __init__(self, parts: Iterable[Polygon]):
        ps = tuple(parts)
        if not ps or not all(isinstance(p, Polygon) for p in ps):
            raise GeometryError("MultiPolygon needs at least one Polygon part")
        object.__setattr__(self, "parts", ps)


Geom = Union[Point, Polygon, MultiPolygon]


@dataclass(frozen=True, eq=False)
class GeometrySet:
    """Ordered sites (id, geometry); the order fixes every derived matrix."""

    sites: tuple
    crs_note: str = ""

    def __init__(self, sites: Iterable, crs_note: str = ""):
        ss = tuple((str(sid), g) for sid, g in sites)
        if not ss:
            raise GeometryError("GeometrySet must contain at least one site")
        ids = [sid for sid, _ in ss]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise GeometryError(f"duplicate site ids: {dupes}")
        object.__setattr__(self, "sites", ss)
        object.__setattr__(self, "crs_note", crs_note)

    def __len__(self) -> int:
        return len(self.sites)

    @property
    def ids(self) -> tuple:
        return tuple(sid for sid, _ in self.sites)

    @property
    def geoms(self) -> tuple:
        return tuple(g for _, g in self.sites)

    def bounding_box(self) -> tuple:
        """(xmin, ymin, xmax, ymax) over every site."""
        boxes = np.array([bounding_box(g) for g in self.geoms])
        return (
            float(boxes[:, 0].min()),
            float(boxes[:, 1].min()),
            float(boxes[:, 2].max()),
            float(boxes[:, 3].max()),
        )

    def translated(self, dx: float, dy: float) -> "GeometrySet":
        return GeometrySet(
            [(sid, translate(g, dx, dy)) for sid, g in self.sites], self.crs_note
        )


@dataclass(frozen=True, eq=False)
class AdjacencyMatrix:
    """Binary symmetric neighbor indicator with zero diagonal."""

    entries: np.ndarray
    site_ids: tuple = None

    def __init__(self, entries, site_ids=None):
        w = np.asarray(entries)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise GeometryError("adjacency entries must be a square matrix")
        if not np.array_equal(w, w.T):
            raise GeometryError("adjacency matrix must be symmetric")
        if np.any(np.diag(w) != 0):
            raise GeometryError("adjacency matrix must have a zero diagonal")
        if not np.isin(w, (0, 1)).all():
            raise GeometryError("adjacency entries must be 0 or 1")
        object.__setattr__(self, "entries", _freeze(w.astype(float)))
        object.__setattr__(self, "site_ids", tuple(site_ids) if site_ids is not None else None)

    @property
    def n(self) -> int:
        return self.entries.shape[0]


# ---------------------------------------------------------------------------
# vectorized kernels shared with the distance module
# ---------------------------------------------------------------------------


def ring_segments(ring: np.ndarray) -> np.ndarray:
    """Edges of a closed ring as an (k, 2, 2) array of (start, end) pairs."""
    return np.stack([ring, np.roll(ring, -1, axis=0)], axis=1)


def boundary_segments(geom: Geom) -> np.ndarray:
    """All boundary edges of a polygonal geometry, shape (m, 2, 2)."""
    if isinstance(geom, Point):
        raise GeometryError("a point has no boundary segments")
    if isinstance(geom, Polygon):
        return np.concatenate([ring_segments(r) for r in geom.rings])
    return np.concatenate([boundary_segments(p) for p in geom.parts])


def geom_vertices(geom: Geom) -> np.ndarray:
    """All vertices (or the point itself), shape (k, 2)."""
    if isinstance(geom, Point):
        return geom.coords.reshape(1, 2)
    if isinstance(geom, Polygon):
        return np.concatenate(geom.rings)
    return np.concatenate([geom_vertices(p) for p in geom.parts])


def bounding_box(geom: Geom) -> tuple:
    v = geom_vertices(geom)
    return (float(v[:, 0].min()), float(v[:, 1].min()), float(v[:, 0].max()), float(v[:, 1].max()))


def translate(geom: Geom, dx: float, dy: float) -> Geom:
    shift = np.array([dx, dy])
    if isinstance(geom, Point):
        return Point(geom.x + dx, geom.y + dy)
    if isinstance(geom, Polygon):
        return Polygon(geom.exterior + shift, [h + shift for h in geom.holes])
    return MultiPolygon([translate(p, dx, dy) for p in geom.parts])


def min_distance_to_segments(points: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest of the given segments.

    points: (n, 2); segs: (m, 2, 2). Chunked over points to bound memory.
    """
    points = np.atleast_2d(points)
    ax, ay = segs[:, 0, 0], segs[:, 0, 1]
    dx, dy = segs[:, 1, 0] - ax, segs[:, 1, 1] - ay
    denom = dx * dx + dy * dy
    denom_safe = np.where(denom > 0, denom, 1.0)
    out = np.empty(len(points))
    chunk = max(1, int(4e6) // max(1, len(segs)))
    for lo in range(0, len(points), chunk):
        px = points[lo : lo + chunk, 0:1]
        py = points[lo : lo + chunk, 1:2]
        t = np.clip(((px - ax) * dx + (py - ay) * dy) / denom_safe, 0.0, 1.0)
        ex = px - (ax + t * dx)
        ey = py - (ay + t * dy)
        out[lo : lo + chunk] = np.sqrt((ex * ex + ey * ey).min(axis=1))
    return out


def _point_seg_matrix(points: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """(n, m) distances from every point to every segment."""
    ax, ay = segs[:, 0, 0], segs[:, 0, 1]
    dx, dy = segs[:, 1, 0] - ax, segs[:, 1, 1] - ay
    denom = dx * dx + dy * dy
    denom_safe = np.where(denom > 0, denom, 1.0)
    px, py = points[:, 0:1], points[:, 1:2]
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / denom_safe, 0.0, 1.0)
    ex = px - (ax + t * dx)
    ey = py - (ay + t * dy)
    return np.sqrt(ex * ex + ey * ey)


def _segment_pairs_distance(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """Exact distances for aligned segment pairs pa[k] vs pb[k], shape (k,)."""

    def pt_seg(px, py, q1, q2):
        dx, dy = q2[:, 0] - q1[:, 0], q2[:, 1] - q1[:, 1]
        denom = dx * dx + dy * dy
        denom_safe = np.where(denom > 0, denom, 1.0)
        t = np.clip(((px - q1[:, 0]) * dx + (py - q1[:, 1]) * dy) / denom_safe, 0.0, 1.0)
        ex = px - (q1[:, 0] + t * dx)
        ey = py - (q1[:, 1] + t * dy)
        return np.sqrt(ex * ex + ey * ey)

    a1, a2 = pa[:, 0], pa[:, 1]
    b1, b2 = pb[:, 0], pb[:, 1]
    d = np.minimum(
        np.minimum(pt_seg(a1[:, 0], a1[:, 1], b1, b2), pt_seg(a2[:, 0], a2[:, 1], b1, b2)),
        np.minimum(pt_seg(b1[:, 0], b1[:, 1], a1, a2), pt_seg(b2[:, 0], b2[:, 1], a1, a2)),
    )

    def cross(ux, uy, vx, vy):
        return ux * vy - uy * vx

    rx, ry = a2[:, 0] - a1[:, 0], a2[:, 1] - a1[:, 1]
    sx, sy = b2[:, 0] - b1[:, 0], b2[:, 1] - b1[:, 1]
    d1 = cross(rx, ry, b1[:, 0] - a1[:, 0], b1[:, 1] - a1[:, 1])
    d2 = cross(rx, ry, b2[:, 0] - a1[:, 0], b2[:, 1] - a1[:, 1])
    d3 = cross(sx, sy, a1[:, 0] - b1[:, 0], a1[:, 1] - b1[:, 1])
    d4 = cross(sx, sy, a2[:, 0] - b1[:, 0], a2[:, 1] - b1[:, 1])
    d[(d1 * d2 < 0) & (d3 * d4 < 0)] = 0.0
    return d


def segments_min_distance(segs_a: np.ndarray, segs_b: np.ndarray) -> float:
    """Minimum distance between two segment sets; 0 if any pair crosses.

    Seeds an upper bound from endpoint-to-endpoint distances, then
    evaluates exactly only the segment pairs whose bounding-box gap could
    still beat it, so the result is exact while most pairs are skipped.
    """
    ea = segs_a.reshape(-1, 2)
    eb = segs_b.reshape(-1, 2)
    dvv = np.hypot(ea[:, 0][:, None] - eb[:, 0][None, :], ea[:, 1][:, None] - eb[:, 1][None, :])
    best = float(dvv.min())
    if best == 0.0:
        return 0.0
    lo_a = segs_a.min(axis=1)
    hi_a = segs_a.max(axis=1)
    lo_b = segs_b.min(axis=1)
    hi_b = segs_b.max(axis=1)
    gx = np.maximum(
        0.0, np.maximum(lo_a[:, None, 0], lo_b[None, :, 0]) - np.minimum(hi_a[:, None, 0], hi_b[None, :, 0])
    )
    gy = np.maximum(
        0.0, np.maximum(lo_a[:, None, 1], lo_b[None, :, 1]) - np.minimum(hi_a[:, None, 1], hi_b[None, :, 1])
    )
    ii, jj = np.nonzero(gx * gx + gy * gy < best * best)
    if len(ii) == 0:
        return best
    d = _segment_pairs_distance(segs_a[ii], segs_b[jj])
    return min(best, float(d.min()))


def _points_in_rings(points: np.ndarray, rings: Sequence[np.ndarray]) -> np.ndarray:
    """Even-odd interior test over the union of rings (boundary excluded)."""
    points = np.atleast_2d(points)
    x, y = points[:, 0:1], points[:, 1:2]
    crossings = np.zeros(len(points), dtype=np.int64)
    for ring in rings:
        xi, yi = ring[:, 0], ring[:, 1]
        xj, yj = np.roll(xi, -1), np.roll(yi, -1)
        straddle = (yi > y) != (yj > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = xi + (y - yi) * (xj - xi) / (yj - yi)
        crossings += np.sum(straddle & (x < xint), axis=1)
    return crossings % 2 == 1


def evenodd_interior(points: np.ndarray, geom: Geom) -> np.ndarray:
    """Even-odd interior test for polygonal geometries (boundary excluded)."""
    if isinstance(geom, Polygon):
        return _points_in_rings(points, geom.rings)
    hit = np.zeros(len(np.atleast_2d(points)), dtype=bool)
    for part in geom.parts:
        hit |= _points_in_rings(points, part.rings)
    return hit


def points_in_geom(points: np.ndarray, geom: Geom) -> np.ndarray:
    """Closed-set membership for an array of points, shape (n,) bool."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if isinstance(geom, Point):
        return (points[:, 0] == geom.x) & (points[:, 1] == geom.y)
    inside = evenodd_interior(points, geom)
    segs = boundary_segments(geom)
    scale = max(np.abs(segs).max(), np.abs(points).max(), 1.0)
    on_edge = min_distance_to_segments(points, segs) <= _BOUNDARY_RTOL * scale
    return inside | on_edge


def point_in_geom(p: Point, g: Geom) -> bool:
    """True iff p lies in the closed region of g (boundary counts as inside)."""
    return bool(points_in_geom(p.coords.reshape(1, 2), g)[0])


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_NUMBER_RE = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?")


class _WktCursor:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message: str) -> ParseError:
        return ParseError(f"WKT parse error at offset {self.pos}: {message}")

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def expect(self, char: str):
        self.skip_ws()
        if self.pos >= len(self.text) or self.text[self.pos] != char:
            raise self.error(f"expected '{char}'")
        self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def keyword(self) -> str:
        self.skip_ws()
        m = re.match(r"[A-Za-z]+", self.text[self.pos :])
        if not m:
            raise self.error("expected a geometry keyword")
        self.pos += m.end()
        return m.group(0).upper()

    def number(self) -> float:
        self.skip_ws()
        m = _NUMBER_RE.match(self.text, self.pos)
        if not m:
            raise self.error("expected a number")
        self.pos = m.end()
        return float(m.group(0))

    def coord_pair(self) -> tuple:
        return (self.number(), self.number())

    def ring(self) -> list:
        self.expect("(")
        coords = [self.coord_pair()]
        while self.peek() == ",":
            self.expect(",")
            coords.append(self.coord_pair())
        self.expect(")")
        return coords

    def ring_list(self) -> list:
        self.expect("(")
        rings = [self.ring()]
        while self.peek() == ",":
            self.expect(",")
            rings.append(self.ring())
        self.expect(")")
        return rings

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos == len(self.text)


def parse_wkt(text: str) -> Geom:
    """Parse a POINT / POLYGON / MULTIPOLYGON well-known-text string."""
    cur = _WktCursor(text)
    kind = cur.keyword()
    try:
        if kind == "POINT":
            cur.expect("(")
            x, y = cur.coord_pair()
            cur.expect(")")
            geom = Point(x, y)
        elif kind == "POLYGON":
            rings = cur.ring_list()
            geom = Polygon(rings[0], rings[1:])
        elif kind == "MULTIPOLYGON":
            cur.expect("(")
            parts = [_polygon_from_rings(cur.ring_list())]
            while cur.peek() == ",":
                cur.expect(",")
                parts.append(_polygon_from_rings(cur.ring_list()))
            cur.expect(")")
            geom = MultiPolygon(parts)
        else:
            raise cur.error(f"unsupported geometry type '{kind}'")
    except GeometryError as exc:
        raise ParseError(f"WKT parse error at offset {cur.pos}: {exc}") from exc
    if not cur.at_end():
        raise cur.error("trailing characters after geometry")
    return geom


def _polygon_from_rings(rings: list) -> Polygon:
    return Polygon(rings[0], rings[1:])


def format_wkt(geom: Geom) -> str:
    """Inverse of parse_wkt on vertex lists."""

    def fmt_ring(ring: np.ndarray) -> str:
        closed = np.vstack([ring, ring[:1]])
        return "(" + ", ".join(f"{repr(float(x))} {repr(float(y))}" for x, y in closed) + ")"

    if isinstance(geom, Point):
        return f"POINT ({repr(geom.x)} {repr(geom.y)})"
    if isinstance(geom, Polygon):
        return "POLYGON (" + ", ".join(fmt_ring(r) for r in geom.rings) + ")"
    bodies = [", ".join(fmt_ring(r) for r in p.rings) for p in geom.parts]
    return "MULTIPOLYGON (" + ", ".join("(" + b + ")" for b in bodies) + ")"


def _geom_from_geojson(obj: dict) -> Geom:
    gtype = obj.get("type")
    coords = obj.get("coordinates")
    if gtype == "Point":
        return Point(float(coords[0]), float(coords[1]))
    if gtype == "Polygon":
        return Polygon(coords[0], coords[1:])
    if gtype == "MultiPolygon":
        return MultiPolygon([Polygon(rings[0], rings[1:]) for rings in coords])
    raise ParseError(f"unsupported geometry type '{gtype}' (only Point/Polygon/MultiPolygon)")


def parse_geojson(text: str, id_field: str = "id"):
    """Parse a FeatureCollection into a GeometrySet and its attribute table.

    Every feature must carry a unique `id_field` property; all remaining
    properties become columns of the returned table, aligned to site order.

    Returns
    -------
    (GeometrySet, pandas.DataFrame)
        The frame has a `site_id` column plus one column per property.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed GeoJSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ParseError("expected a GeoJSON FeatureCollection")
    sites = []
    rows = []
    for k, feature in enumerate(doc.get("features", [])):
        props = dict(feature.get("properties") or {})
        fid = props.pop(id_field, feature.get("id"))
        if fid is None:
            raise ParseError(f"feature {k} is missing the '{id_field}' property")
        geometry = feature.get("geometry")
        if geometry is None:
            raise ParseError(f"feature '{fid}' has no geometry")
        try:
            geom = _geom_from_geojson(geometry)
        except GeometryError as exc:
            raise ParseError(f"feature '{fid}': {exc}") from exc
        sites.append((str(fid), geom))
        rows.append({"site_id": str(fid), **props})
    if not sites:
        raise ParseError("FeatureCollection contains no features")
    ids = [sid for sid, _ in sites]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ParseError(f"duplicate feature ids: {dupes}")
    gs = GeometrySet(sites, crs_note=str(doc.get("crs", "")))
    table = pd.DataFrame(rows)
    return gs, table


# ---------------------------------------------------------------------------
# adjacency
# ---------------------------------------------------------------------------


def _bbox_gap(box_a: tuple, box_b: tuple) -> float:
    dx = max(0.0, max(box_a[0], box_b[0]) - min(box_a[2], box_b[2]))
    dy = max(0.0, max(box_a[1], box_b[1]) - min(box_a[3], box_b[3]))
    return math.hypot(dx, dy)


def derive_adjacency(gs: GeometrySet, tolerance: float = 0.0) -> AdjacencyMatrix:
    """Neighbor matrix: 1 where two sites' boundaries come within `tolerance`.

    Only polygonal sites are allowed; adjacency is undefined for points.
    The tolerance (default 0) absorbs sliver gaps in digitized borders.
    """
    if tolerance < 0:
        raise GeometryError("tolerance must be nonnegative")
    for sid, g in gs.sites:
        if isinstance(g, Point):
            raise GeometryError(f"adjacency is undefined for point site '{sid}'")
    n = len(gs)
    segs = [boundary_segments(g) for g in gs.geoms]
    boxes = [bounding_box(g) for g in gs.geoms]
    w = np.zeros((n, n), dtype=np.int8)
    for i in range(n):
        for j in range(i + 1, n):
            if _bbox_gap(boxes[i], boxes[j]) > tolerance:
                continue
            if segments_min_distance(segs[i], segs[j]) <= tolerance:
                w[i, j] = w[j, i] = 1
    return AdjacencyMatrix(w, site_ids=gs.ids)
