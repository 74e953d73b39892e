"""Polygonal (centroidal Voronoi) meshes of 2-D design domains.

Meshes are built by clipping the Voronoi diagram of random sites to the
domain and relaxing the sites with Lloyd's algorithm.  Boundary regions
(supports, load points, loaded edges) are named on the domain and resolved
to mesh node sets by :func:`tag_boundary`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import shapely
from scipy.sparse import coo_matrix, csr_matrix
from scipy.spatial import Voronoi, cKDTree

log = logging.getLogger(__name__)

MAX_RESEED = 5
MAX_EXTRA_LLOYD = 20


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    """A named piece of the domain boundary.

    ``kind`` is ``"segment"`` (coords ``(x0, y0, x1, y1)``) or ``"point"``
    (coords ``(x, y)``).  A point region resolves to the single nearest
    node; ``tol`` bounds how far that node may be.
    """

    name: str
    kind: str
    coords: tuple
    tol: float | None = None

    def __post_init__(self):
        if self.kind not in ("segment", "point"):
            raise MeshError(f"region {self.name!r}: unknown kind {self.kind!r}")
        n = 4 if self.kind == "segment" else 2
        if len(self.coords) != n:
            raise MeshError(f"region {self.name!r}: expected {n} coordinates")
        object.__setattr__(self, "coords", tuple(float(c) for c in self.coords))


@dataclass(frozen=True)
class Domain2D:
    vertices: np.ndarray
    regions: tuple = ()
    kind: str = "polygon"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise MeshError("domain needs at least 3 vertices")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "regions", tuple(self.regions))
        poly = shapely.Polygon(v)
        if not poly.is_valid:
            raise MeshError("domain polygon is self-intersecting")
        if self.area <= 0.0:
            raise MeshError("domain must be counter-clockwise with positive area")

    @classmethod
    def rectangle(cls, width, height, regions=()):
        if not (width > 0 and height > 0):
            raise MeshError("rectangle needs width > 0 and height > 0")
        v = [(0.0, 0.0), (width, 0.0), (width, height), (0.0, height)]
        return cls(np.array(v), regions, kind="rectangle")

    @property
    def polygon(self):
        return shapely.Polygon(self.vertices)

    @property
    def area(self):
        x, y = self.vertices.T
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    @property
    def diameter(self):
        d = self.vertices[:, None, :] - self.vertices[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())

    @property
    def bounds(self):
        return (*self.vertices.min(0), *self.vertices.max(0))

    @property
    def is_convex(self):
        v = self.vertices
        a, b = v - np.roll(v, 1, axis=0), np.roll(v, -1, axis=0) - v
        return bool(np.all(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0] >= 0.0))

    def region(self, name):
        for r in self.regions:
            if r.name == name:
                return r
        raise KeyError(name)

    def with_regions(self, regions):
        return replace(self, regions=tuple(regions))


@dataclass(frozen=True, eq=False)
class PolyMesh:
    """Immutable polygonal mesh.

    ``elements`` is a tuple of counter-clockwise node index arrays.  The
    ``sites`` the Voronoi cells were built from are kept when known.
    """

    nodes: np.ndarray
    elements: tuple
    boundary: dict = field(default_factory=dict)
    sites: np.ndarray | None = None

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        elems = []
        for e in self.elements:
            a = np.asarray(e, dtype=np.int64)
            a.setflags(write=False)
            elems.append(a)
        object.__setattr__(self, "elements", tuple(elems))
        object.__setattr__(self, "boundary", {k: np.asarray(v, dtype=np.int64)
                                              for k, v in self.boundary.items()})
        self._validate()

    def _validate(self):
        n = len(self.nodes)
        for i, e in enumerate(self.elements):
            if len(e) < 3:
                raise MeshError(f"element {i} has fewer than 3 nodes")
            if e.min() < 0 or e.max() >= n:
                raise MeshError(f"element {i} references a node out of range")
        bad = np.flatnonzero(self.areas <= 0.0)
        if bad.size:
            raise MeshError(f"element {bad[0]} has non-positive signed area")
        for name, idx in self.boundary.items():
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise MeshError(f"region {name!r} references a node out of range")

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def areas(self):
        return self._geometry()[0]

    @property
    def centroids(self):
        return self._geometry()[1]

    def _geometry(self):
        cached = self.__dict__.get("_geom")
        if cached is None:
            areas = np.empty(self.n_elements)
            cents = np.empty((self.n_elements, 2))
            for i, e in enumerate(self.elements):
                areas[i], cents[i] = polygon_area_centroid(self.nodes[e])
            cached = (areas, cents)
            object.__setattr__(self, "_geom", cached)
        return cached

    def edges(self):
        """Unique undirected edges and the number of elements sharing each."""
        a = np.concatenate(self.elements)
        b = np.concatenate([np.roll(e, -1) for e in self.elements])
        pairs = np.sort(np.stack([a, b], axis=1), axis=1)
        uniq, counts = np.unique(pairs, axis=0, return_counts=True)
        return uniq, counts

    def boundary_edges(self):
        uniq, counts = self.edges()
        return uniq[counts == 1]

    def boundary_nodes(self):
        return np.unique(self.boundary_edges())

    def adjacency(self) -> csr_matrix:
        """Element adjacency through shared edges (symmetric, 0/1)."""
        a = np.concatenate(self.elements)
        b = np.concatenate([np.roll(e, -1) for e in self.elements])
        owner = np.repeat(np.arange(self.n_elements), [len(e) for e in self.elements])
        pairs = np.sort(np.stack([a, b], axis=1), axis=1)
        key = pairs[:, 0] * self.n_nodes + pairs[:, 1]
        order = np.argsort(key, kind="stable")
        key, owner = key[order], owner[order]
        same = np.flatnonzero(key[1:] == key[:-1])
        i, j = owner[same], owner[same + 1]
        n = self.n_elements
        adj = coo_matrix((np.ones(2 * len(i)), (np.r_[i, j], np.r_[j, i])), shape=(n, n))
        adj = adj.tocsr()
        adj.data[:] = 1.0
        return adj

    def median_edge_length(self):
        e = self.edges()[0]
        return float(np.median(np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1)))

    def element_size(self):
        return float(np.sqrt(self.areas.mean()))

    def with_boundary(self, boundary):
        return PolyMesh(self.nodes, self.elements, dict(boundary), self.sites)

    def equals(self, other):
        return (np.array_equal(self.nodes, other.nodes)
                and len(self.elements) == len(other.elements)
                and all(np.array_equal(a, b) for a, b in zip(self.elements, other.elements))
                and self.boundary.keys() == other.boundary.keys()
                and all(np.array_equal(self.boundary[k], other.boundary[k]) for k in self.boundary))


def polygon_area_centroid(xy):
    x, y = xy[:, 0], xy[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if area == 0.0:
        return 0.0, xy.mean(0)
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return area, np.array([cx, cy])


def polygon_second_moment(xy, point):
    """Integral of |x - point|^2 over a simple polygon."""
    p = xy - point
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    ixx = (cross * (x * x + x * xn + xn * xn)).sum() / 12.0
    iyy = (cross * (y * y + y * yn + yn * yn)).sum() / 12.0
    return ixx + iyy


def is_star_shaped(xy, center):
    """True if every edge is seen counter-clockwise from ``center``."""
    p = xy - center
    q = np.roll(p, -1, axis=0)
    return bool(np.all(p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0] > 0.0))


# --------------------------------------------------------------------------
# Voronoi construction

def _reflect(points, a, b):
    d = b - a
    n = np.array([-d[1], d[0]]) / np.hypot(*d)
    dist = (points - a) @ n
    return points - 2.0 * dist[:, None] * n, np.abs(dist)


def _clipped_cells(sites, domain, spacing):
    """Voronoi cells of ``sites`` intersected with the domain polygon."""
    verts = domain.vertices
    extra = []
    # mirror sites across the edges so boundary cells close cleanly; on
    # non-convex domains mirrors can land nearer to interior points than
    # any real site, so there the plain diagram is clipped instead
    if domain.is_convex:
        for k in range(len(verts)):
            refl, dist = _reflect(sites, verts[k], verts[(k + 1) % len(verts)])
            extra.append(refl[dist < 4.0 * spacing])
    x0, y0, x1, y1 = domain.bounds
    big = 10.0 * max(x1 - x0, y1 - y0)
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    far = np.array([[cx - big, cy - big], [cx + big, cy - big],
                    [cx + big, cy + big], [cx - big, cy + big]])
    pts = np.vstack([sites, *extra, far])
    vor = Voronoi(pts)
    regions = [vor.regions[vor.point_region[i]] for i in range(len(sites))]
    if any(-1 in r or len(r) < 3 for r in regions):
        raise MeshError("unbounded Voronoi cell for an interior site")
    flat = np.concatenate(regions)
    owner = np.repeat(np.arange(len(regions)), [len(r) for r in regions])
    rings = shapely.linearrings(vor.vertices[flat], indices=owner)
    cells = shapely.intersection(shapely.polygons(rings), domain.polygon)
    return cells


def _all_polygons(cells):
    return all(isinstance(c, shapely.Polygon) and not c.is_empty for c in cells)


def _all_star_shaped(mesh):
    return all(is_star_shaped(mesh.nodes[e], c) for e, c in zip(mesh.elements, mesh.centroids))


def cvt_energy(cells, sites):
    """Sum over cells of the integral of squared distance to the cell's site."""
    total = 0.0
    for cell, s in zip(cells, sites):
        xy = np.asarray(shapely.orient_polygons(cell).exterior.coords)[:-1]
        total += polygon_second_moment(xy, s)
    return total


def _random_sites(domain, n, rng):
    x0, y0, x1, y1 = domain.bounds
    poly = domain.polygon
    shapely.prepare(poly)
    out = np.empty((0, 2))
    while len(out) < n:
        cand = rng.uniform((x0, y0), (x1, y1), size=(2 * n, 2))
        inside = shapely.contains_xy(poly, cand[:, 0], cand[:, 1])
        out = np.vstack([out, cand[inside]])
    return out[:n]


def _has_duplicates(sites, tol):
    if len(sites) < 2:
        return False
    return len(cKDTree(sites).query_pairs(tol)) > 0


def lloyd(domain, sites, iterations, energies=None):
    """Run Lloyd iterations; returns the final sites and cells."""
    spacing = np.sqrt(domain.area / len(sites))
    cells = _clipped_cells(sites, domain, spacing)
    if energies is not None:
        energies.append(cvt_energy(cells, sites))
    for _ in range(iterations):
        sites = shapely.get_coordinates(shapely.centroid(cells))
        cells = _clipped_cells(sites, domain, spacing)
        if energies is not None:
            energies.append(cvt_energy(cells, sites))
    return sites, cells


def _cells_to_mesh(cells, sites, domain):
    tol = 1e-9 * domain.diameter
    rings = []
    for cell in cells:
        xy = np.asarray(shapely.orient_polygons(cell).exterior.coords)[:-1]
        rings.append(xy)
    allxy = np.vstack(rings)
    _snap_reentrant(allxy, domain, 0.5 * np.sqrt(domain.area / len(rings)), tol)
    _snap_point_regions(allxy, domain, tol)
    # merge coincident vertices, numbering nodes by first appearance
    tree = cKDTree(allxy)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    label = np.arange(len(allxy))
    if len(pairs):
        from scipy.sparse.csgraph import connected_components
        g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
                       shape=(len(allxy), len(allxy)))
        _, label = connected_components(g, directed=False)
    first = {}
    node_of = np.empty(len(allxy), dtype=np.int64)
    for k, lab in enumerate(label):
        if lab not in first:
            first[lab] = len(first)
        node_of[k] = first[lab]
    nodes = np.empty((len(first), 2))
    nodes[node_of] = allxy
    _snap_to_boundary(nodes, domain, 1e3 * tol)
    elements = []
    start = 0
    for xy in rings:
        idx = node_of[start:start + len(xy)]
        start += len(xy)
        keep = idx != np.roll(idx, -1)
        elements.append(idx[keep])
    elements = _drop_collinear(nodes, elements)
    used = np.unique(np.concatenate(elements))
    remap = -np.ones(len(nodes), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return PolyMesh(nodes[used], tuple(remap[e] for e in elements), {}, np.asarray(sites))


def reentrant_vertices(domain):
    v = domain.vertices
    a, b = v - np.roll(v, 1, axis=0), np.roll(v, -1, axis=0) - v
    return v[a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0] < 0.0]


def _snap_reentrant(xy, domain, radius, tol):
    """Move boundary vertices close to a re-entrant corner onto the corner.

    A Voronoi edge meeting the boundary just past a re-entrant corner leaves
    a sliver that makes the neighbouring cell non star-shaped about its
    centroid; collapsing it keeps the partition exact because the vertex
    slides along the boundary.
    """
    corners = reentrant_vertices(domain)
    if not len(corners):
        return
    ring = shapely.LinearRing(domain.vertices)
    on_bnd = shapely.distance(ring, shapely.points(xy)) <= tol
    for c in corners:
        near = on_bnd & (np.linalg.norm(xy - c, axis=1) <= radius)
        xy[near] = c


def _snap_point_regions(xy, domain, tol):
    """Slide the nearest boundary vertex onto each point region on the boundary.

    Point loads and supports in the middle of an edge would otherwise land
    on whichever vertex happens to be closest (possibly farther than the
    tagging tolerance on fine meshes).  The vertex moves along its boundary
    edge, so the partition stays exact; domain corners never move.
    """
    verts = domain.vertices
    corner = cKDTree(verts).query(xy)[0] <= tol
    for reg in domain.regions:
        if reg.kind != "point":
            continue
        p = np.asarray(reg.coords, dtype=float)
        for k in range(len(verts)):
            a, b = verts[k], verts[(k + 1) % len(verts)]
            if _segment_distance(p[None], (*a, *b))[0] > tol:
                continue
            on_edge = (_segment_distance(xy, (*a, *b)) <= tol) & ~corner
            d = np.linalg.norm(xy - p, axis=1)
            if not on_edge.any() or np.min(np.where(corner, np.inf, d)) <= tol \
                    or np.any(d[corner] <= tol):
                break
            c = xy[np.argmin(np.where(on_edge, d, np.inf))].copy()
            xy[np.linalg.norm(xy - c, axis=1) <= tol] = p
            break


def _snap_to_boundary(nodes, domain, tol):
    verts = domain.vertices
    for k in range(len(verts)):
        a, b = verts[k], verts[(k + 1) % len(verts)]
        d = _segment_distance(nodes, (*a, *b))
        near = d <= tol
        if not near.any():
            continue
        t = b - a
        s = np.clip((nodes[near] - a) @ t / (t @ t), 0.0, 1.0)
        nodes[near] = a + s[:, None] * t
        # axis-aligned edges snap exactly
        if t[0] == 0.0:
            nodes[near, 0] = a[0]
        if t[1] == 0.0:
            nodes[near, 1] = a[1]
    close = cKDTree(nodes).query(verts)
    hit = close[0] <= tol
    nodes[close[1][hit]] = verts[hit]


def _drop_collinear(nodes, elements):
    out = []
    for e in elements:
        while len(e) > 3:
            p = nodes[e]
            a, b = np.roll(p, 1, axis=0) - p, np.roll(p, -1, axis=0) - p
            cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
            scale = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
            flat = np.abs(cross) <= 1e-12 * scale
            if not flat.any():
                break
            e = e[~flat]
        out.append(e)
    return out


def generate_cvt_mesh(domain: Domain2D, n_elements: int, seed: int = 0,
                      lloyd_iterations: int = 100) -> PolyMesh:
    """Centroidal Voronoi mesh with ``n_elements`` polygons.

    Sites are drawn uniformly in the domain from ``seed`` and relaxed by
    ``lloyd_iterations`` centroid updates.  Cells that are not star-shaped
    about their centroid (possible on non-convex domains) trigger extra
    Lloyd sweeps before giving up.
    """
    if n_elements < 1:
        raise MeshError("n_elements must be >= 1")
    if lloyd_iterations < 0:
        raise MeshError("lloyd_iterations must be >= 0")
    if not domain.area > 0:
        raise MeshError("degenerate domain (zero area)")
    dup_tol = 1e-9 * domain.diameter
    for attempt in range(MAX_RESEED):
        rng = np.random.default_rng([seed, attempt])
        sites = _random_sites(domain, n_elements, rng)
        if not _has_duplicates(sites, dup_tol):
            break
        log.warning("duplicate mesh sites, reseeding (attempt %d)", attempt + 1)
    else:
        raise MeshError("could not draw distinct sites within the retry budget")

    sites, cells = lloyd(domain, sites, lloyd_iterations)
    for _ in range(MAX_EXTRA_LLOYD + 1):
        if _has_duplicates(sites, dup_tol):
            raise MeshError("mesh sites collapsed during Lloyd iterations")
        mesh = _cells_to_mesh(cells, sites, domain) if _all_polygons(cells) else None
        # clipped cells of a convex domain are convex
        if mesh is not None and (domain.is_convex or _all_star_shaped(mesh)):
            break
        sites, cells = lloyd(domain, sites, 1)
    else:
        raise MeshError("cells remain non star-shaped after extra Lloyd sweeps")
    if domain.regions:
        mesh = tag_boundary(mesh, domain)
    return mesh


# --------------------------------------------------------------------------
# Boundary regions

def _segment_distance(points, seg):
    a, b = np.array(seg[:2]), np.array(seg[2:])
    d = b - a
    L2 = d @ d
    if L2 == 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ d / L2, 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * d), axis=1)


def _on_boundary(point, domain, tol):
    ring = shapely.LinearRing(domain.vertices)
    return ring.distance(shapely.Point(point)) <= tol


def region_nodes(mesh: PolyMesh, domain: Domain2D, region: Region) -> np.ndarray:
    default_tol = 1e-6 * domain.diameter
    if region.kind == "segment":
        tol = default_tol if region.tol is None else region.tol
        bnodes = mesh.boundary_nodes()
        d = _segment_distance(mesh.nodes[bnodes], region.coords)
        idx = np.sort(bnodes[d <= tol])
    else:
        tol = 0.5 * mesh.median_edge_length() if region.tol is None else region.tol
        pt = np.array(region.coords)
        cand = mesh.boundary_nodes() if _on_boundary(pt, domain, default_tol) \
            else np.arange(mesh.n_nodes)
        d = np.linalg.norm(mesh.nodes[cand] - pt, axis=1)
        k = int(np.argmin(d))
        idx = cand[[k]] if d[k] <= tol else np.empty(0, dtype=np.int64)
    if idx.size == 0:
        raise MeshError(f"region {region.name!r} matches no mesh node")
    return idx


def tag_boundary(mesh: PolyMesh, domain: Domain2D) -> PolyMesh:
    """Resolve every named region of ``domain`` to mesh node indices."""
    boundary = {r.name: region_nodes(mesh, domain, r) for r in domain.regions}
    return mesh.with_boundary(boundary)


# --------------------------------------------------------------------------
# File formats

def save_mesh(mesh: PolyMesh, path) -> None:
    lines = ["polymesh v1", f"NODES {mesh.n_nodes}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.nodes]
    lines.append(f"ELEMENTS {mesh.n_elements}")
    lines += [" ".join(map(str, [len(e), *e.tolist()])) for e in mesh.elements]
    lines.append(f"REGIONS {len(mesh.boundary)}")
    for name, idx in mesh.boundary.items():
        lines.append(f"{name} {len(idx)}")
        lines += [str(i) for i in idx.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


class MeshParseError(MeshError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def load_mesh(path) -> PolyMesh:
    text = Path(path).read_text().splitlines()
    pos = 0

    def take():
        nonlocal pos
        while pos < len(text) and not text[pos].strip():
            pos += 1
        if pos >= len(text):
            raise MeshParseError(pos + 1, "unexpected end of file")
        pos += 1
        return pos, text[pos - 1].split()

    def header(word):
        ln, tok = take()
        if len(tok) != 2 or tok[0] != word:
            raise MeshParseError(ln, f"expected '{word} <count>'")
        try:
            return int(tok[1])
        except ValueError:
            raise MeshParseError(ln, "bad count") from None

    ln, tok = take()
    if tok != ["polymesh", "v1"]:
        raise MeshParseError(ln, "missing 'polymesh v1' header")
    n = header("NODES")
    nodes = np.empty((n, 2))
    for i in range(n):
        ln, tok = take()
        try:
            nodes[i] = [float(tok[0]), float(tok[1])]
            if len(tok) != 2:
                raise ValueError
        except (ValueError, IndexError):
            raise MeshParseError(ln, "expected 'x y'") from None
    m = header("ELEMENTS")
    elements = []
    for _ in range(m):
        ln, tok = take()
        try:
            vals = [int(t) for t in tok]
        except ValueError:
            raise MeshParseError(ln, "non-integer connectivity") from None
        if not vals or vals[0] != len(vals) - 1 or vals[0] < 3:
            raise MeshParseError(ln, "element arity does not match index count")
        e = np.array(vals[1:], dtype=np.int64)
        if e.min() < 0 or e.max() >= n:
            raise MeshParseError(ln, "node index out of range")
        if polygon_area_centroid(nodes[e])[0] <= 0.0:
            raise MeshParseError(ln, "element has non-positive signed area")
        elements.append(e)
    r = header("REGIONS")
    boundary = {}
    for _ in range(r):
        ln, tok = take()
        if len(tok) != 2:
            raise MeshParseError(ln, "expected '<name> <count>'")
        name, c = tok[0], int(tok[1])
        idx = []
        for _ in range(c):
            ln, tok = take()
            try:
                k = int(tok[0])
            except (ValueError, IndexError):
                raise MeshParseError(ln, "bad node index") from None
            if not 0 <= k < n:
                raise MeshParseError(ln, "node index out of range")
            idx.append(k)
        boundary[name] = np.array(idx, dtype=np.int64)
    return PolyMesh(nodes, tuple(elements), boundary)


def write_vtk(mesh: PolyMesh, path, cell_data=None) -> None:
    """Legacy ASCII VTK polydata with one POLYGON per element."""
    cell_data = cell_data or {}
    size = sum(len(e) + 1 for e in mesh.elements)
    out = ["# vtk DataFile Version 3.0", "polyrto mesh", "ASCII", "DATASET POLYDATA",
           f"POINTS {mesh.n_nodes} double"]
    out += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.nodes]
    out.append(f"POLYGONS {mesh.n_elements} {size}")
    out += [" ".join(map(str, [len(e), *e.tolist()])) for e in mesh.elements]
    if cell_data:
        out.append(f"CELL_DATA {mesh.n_elements}")
        for name, values in cell_data.items():
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [f"{v:.17g}" for v in np.asarray(values, dtype=float)]
    Path(path).write_text("\n".join(out) + "\n")
