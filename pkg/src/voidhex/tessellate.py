"""All-quad tessellation of Voronoi facets.

Each facet is decomposed in two phases: large facets first get a barycenter
point with connectors from their near-straight boundary sections, then each
piece is recursively peeled into quads and triangles by quality score. A
final midside subdivision (quad to 4 quads, triangle to 3) makes the patch
all-quad, with edge midpoints registered globally so patches stay conformal
across facets and cells. Interior points live on the facet's original
bisecting plane and are Laplacian-smoothed there.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .geometry import (
    interior_angles,
    lift_from_plane,
    loop_is_simple,
    plane_basis,
    point_in_polygon,
    polygon_area,
    project_to_plane,
)
from .voronoi import VoronoiCellSet

log = logging.getLogger(__name__)

ANGLE_THRESHOLD = math.radians(155.0)


@dataclass
class TessellateConfig:
    big_vertices: int = 7      # barycenter trigger: vertex count
    big_area: float = 1.0      # barycenter trigger: area, units of R^2
    smooth_iters: int = 20
    quad_bias: float = 0.9     # multiplicative score bias toward quads
    guard_radius: float = 0.93


@dataclass
class FacetPatch:
    facet_id: int
    quads: list                # (4,) global node id tuples, CCW about plane normal
    boundary_nodes: set        # node ids fixed during smoothing
    interior_nodes: list


@dataclass
class FacetQuadMesh:
    """Global tessellation: shared node pool plus one quad patch per facet."""

    nodes: np.ndarray
    patches: dict              # facet id -> FacetPatch
    edge_midpoint: dict        # sorted original-edge vertex pair -> node id
    cellset: VoronoiCellSet
    node_owners: dict = field(default_factory=dict)  # node id -> real cells

    def cell_quads(self, i: int):
        """Facet quads of cell i, each oriented outward (CCW seen from
        outside the cell), with the owning facet id."""
        cs = self.cellset
        out = []
        for fid in cs.cells[i]:
            f = cs.facets[fid]
            if f.deleted or fid not in self.patches:
                continue
            for q in self.patches[fid].quads:
                out.append((fid, q if f.site_a == i else tuple(reversed(q))))
        return out


def group_edges(uv: np.ndarray, threshold: float = ANGLE_THRESHOLD) -> list:
    """Partition boundary vertex indices into runs of near-straight vertices.

    Maximal circular runs of vertices whose interior angle exceeds the
    threshold form one group each; every other vertex is its own group.
    The partition is returned in boundary order.
    """
    n = len(uv)
    ang = interior_angles(uv)
    flagged = ang > threshold
    if flagged.all():
        return [list(range(n))]
    # start at an unflagged vertex so runs never wrap the seam
    start = int(np.flatnonzero(~flagged)[0])
    order = [(start + k) % n for k in range(n)]
    groups = []
    run = []
    for idx in order:
        if flagged[idx]:
            run.append(idx)
        else:
            if run:
                groups.append(run)
                run = []
            groups.append([idx])
    if run:
        groups.append(run)
    groups.sort(key=lambda g: g[0])
    return groups


def _piece_score(pts: list, is_quad: bool, quad_bias: float) -> float:
    m = len(pts)
    edges = []
    max_angle = 0.0
    for k in range(m):
        ax, ay = pts[k]
        bx, by = pts[(k + 1) % m]
        cx, cy = pts[(k - 1) % m]
        edges.append(math.hypot(bx - ax, by - ay))
        v1 = (cx - ax, cy - ay)
        v2 = (bx - ax, by - ay)
        ang = math.atan2(v1[0] * v2[1] - v1[1] * v2[0], v1[0] * v2[0] + v1[1] * v2[1])
        max_angle = max(max_angle, (-ang) % (2.0 * math.pi))
    mean = sum(edges) / m
    cv = math.sqrt(sum((e - mean) ** 2 for e in edges) / m) / max(mean, 1e-300)
    score = cv + 0.5 * max(0.0, math.degrees(max_angle) - 120.0) / 60.0
    return score * (quad_bias if is_quad else 1.0)


def _piece_valid(poly_uv: np.ndarray, piece: list, poly_convex: bool) -> bool:
    """Is the candidate quad/triangle a valid peel from the polygon?"""
    pts = poly_uv[piece]
    if polygon_area(pts) <= 1e-14:
        return False
    # piece must be convex (tolerating slight flatness)
    ang = interior_angles(pts)
    if (ang > math.pi - 1e-9).any():
        return False
    if poly_convex:
        return True
    # no other polygon vertex may sit inside the piece
    others = [k for k in range(len(poly_uv)) if k not in piece]
    for k in others:
        if point_in_polygon(poly_uv[k], pts):
            return False
    remainder = [k for k in range(len(poly_uv)) if k not in piece[1:-1]]
    rem_pts = poly_uv[remainder]
    if len(remainder) >= 3:
        if polygon_area(rem_pts) <= 1e-14:
            return False
        if not loop_is_simple(rem_pts):
            return False
    return True


def _is_convex(uv: np.ndarray) -> bool:
    ang = interior_angles(uv)
    return bool((ang <= math.pi + 1e-12).all())


def split_facet(uv: np.ndarray, groups: list, cfg: TessellateConfig | None = None,
                facet_id: int = -1) -> list:
    """Divide a polygon into quads and triangles.

    Phase one inserts a barycenter on large facets and connects one
    near-bisector vertex from every near-straight group, splitting the
    polygon into wedges. Phase two recursively peels the best-scoring quad
    or triangle from each piece. Returns a list of (points, is_barycenter
    flags) polygons; points are rows of uv plus possibly the barycenter.
    """
    cfg = cfg or TessellateConfig()
    n = len(uv)
    pieces_idx: list = []
    extra_point = None

    def connectors():
        bc = uv.mean(axis=0)
        picks = []
        ang = interior_angles(uv)
        for g in groups:
            cand = [k for k in g if ang[k] > ANGLE_THRESHOLD]
            if not cand:
                continue
            best, best_bias = None, np.inf
            for k in cand:
                v = uv[k]
                to_bc = bc - v
                v1 = uv[(k - 1) % n] - v
                v2 = uv[(k + 1) % n] - v
                a1 = _angle_between(v1, to_bc)
                a2 = _angle_between(to_bc, v2)
                bias = abs(a1 - a2)
                if bias < best_bias:
                    best, best_bias = k, bias
            picks.append(best)
        return sorted(set(picks)), bc

    big = n >= cfg.big_vertices or polygon_area(uv) >= cfg.big_area
    if big:
        picks, bc = connectors()
        if len(picks) >= 2:
            wedges = []
            ok = True
            for a, b in zip(picks, picks[1:] + [picks[0] + n]):
                arc = [(k % n) for k in range(a, b + 1)]
                pts = np.vstack([bc[None, :], uv[arc]])
                if polygon_area(pts) <= 1e-14 or not loop_is_simple(pts):
                    ok = False
                    break
                wedges.append(["bc"] + arc)
            if ok:
                extra_point = bc
                pieces_idx = wedges
    if not pieces_idx:
        pieces_idx = [list(range(n))]

    out = []
    for piece in pieces_idx:
        pts = np.array([extra_point if k == "bc" else uv[k] for k in piece])
        labels = list(piece)
        out.extend(_peel(pts, labels, cfg, facet_id))
    return out


def _angle_between(a, b) -> float:
    return math.atan2(abs(a[0] * b[1] - a[1] * b[0]), a[0] * b[0] + a[1] * b[1])


def _peel(pts: np.ndarray, labels: list, cfg: TessellateConfig, facet_id: int) -> list:
    """Recursively peel quads/triangles off a polygon; returns (pts, labels) pieces."""
    out = []
    while len(pts) > 4:
        m = len(pts)
        convex = _is_convex(pts)
        best = None
        best_score = np.inf
        for size in (4, 3):
            for s in range(m):
                piece = [(s + t) % m for t in range(size)]
                if not _piece_valid(pts, piece, convex):
                    continue
                score = _piece_score([pts[k] for k in piece], size == 4, cfg.quad_bias)
                if score < best_score:
                    best, best_score = piece, score
        if best is None:
            raise GeometryError(
                f"facet {facet_id}: no viable quad or triangle peel "
                "(projected loop may self-intersect)"
            )
        out.append((pts[best], [labels[k] for k in best]))
        drop = set(best[1:-1])
        keep = [k for k in range(m) if k not in drop]
        pts = pts[keep]
        labels = [labels[k] for k in keep]
    out.append((pts, labels))
    return out


def _edge_key(a, b):
    """Canonical undirected key for piece labels (ints or the 'bc' tag)."""
    if isinstance(a, int) and isinstance(b, int):
        return (a, b) if a < b else (b, a)
    return (b, a) if isinstance(a, str) else (a, b)


def subdivide_to_quads(pieces: list, get_node) -> list:
    """Midside subdivision: quad -> 4 quads, triangle -> 3 quads.

    ``get_node(kind, key, uv)`` resolves/creates the global node id for a
    corner ('corner', label), an edge midpoint ('mid', sorted label pair)
    or a piece centroid ('centroid', piece index). Returns quad tuples.
    """
    quads = []
    for pi, (pts, labels) in enumerate(pieces):
        m = len(pts)
        corners = [get_node("corner", lab, pts[k]) for k, lab in enumerate(labels)]
        mids = []
        for k in range(m):
            key = _edge_key(labels[k], labels[(k + 1) % m])
            mids.append(get_node("mid", key, 0.5 * (pts[k] + pts[(k + 1) % m])))
        g = get_node("centroid", pi, pts.mean(axis=0))
        if m == 4:
            quads.extend([
                (corners[0], mids[0], g, mids[3]),
                (mids[0], corners[1], mids[1], g),
                (g, mids[1], corners[2], mids[2]),
                (mids[3], g, mids[2], corners[3]),
            ])
        elif m == 3:
            quads.extend([
                (corners[0], mids[0], g, mids[2]),
                (mids[0], corners[1], mids[1], g),
                (mids[2], g, mids[1], corners[2]),
            ])
        else:  # pragma: no cover
            raise GeometryError(f"piece with {m} vertices reached subdivision")
    return quads


def smooth_facet(uv_nodes: dict, quads: list, interior: list, iters: int = 20):
    """In-plane Laplacian smoothing of the interior patch nodes.

    Each interior node moves to the mean of its edge-connected neighbors;
    boundary nodes stay fixed; if any quad inverts, the patch reverts.
    Returns (smoothed uv dict, reverted flag).
    """
    neigh = {}
    for q in quads:
        for k in range(4):
            a, b = q[k], q[(k + 1) % 4]
            neigh.setdefault(a, set()).add(b)
            neigh.setdefault(b, set()).add(a)
    before = {n: np.array(uv_nodes[n]) for n in uv_nodes}
    cur = dict(before)
    interior = [n for n in interior if n in neigh]
    for _ in range(iters):
        new = dict(cur)
        for node in interior:
            nb = sorted(neigh[node])
            new[node] = np.mean([cur[b] for b in nb], axis=0)
        cur = new
    for q in quads:
        pts = np.array([cur[n] for n in q])
        if polygon_area(pts) <= 0:
            log.warning("facet patch smoothing inverted a quad; reverting")
            return before, True
    return cur, False


def tessellate_cells(cs: VoronoiCellSet, cfg: TessellateConfig | None = None) -> FacetQuadMesh:
    """Tessellate every live facet into a conformal all-quad patch."""
    cfg = cfg or TessellateConfig()
    R = cs.bed.radius_nominal
    nodes = [p for p in cs.points]
    node_owners: dict = {}
    edge_midpoint: dict = {}
    patches = {}

    for fid, f in enumerate(cs.facets):
        if f.deleted:
            continue
        loop = f.loop
        owners = [f.site_a] + ([f.site_b] if f.site_b < cs.n_real else [])
        uv = project_to_plane(cs.points[loop], f.plane_point, f.plane_normal)
        if polygon_area(uv) <= 0:
            raise GeometryError(f"facet {fid} projects to a non-positive area loop")
        groups = group_edges(uv)
        pieces = split_facet(uv, groups, cfg, facet_id=fid)

        local_uv: dict = {}
        local_mid: dict = {}
        local_centroid: dict = {}
        boundary_nodes = set()
        interior_nodes = []

        def get_node(kind, key, uv_pt):
            nonlocal nodes
            if kind == "corner":
                if key == "bc":
                    if "bc" not in local_centroid:
                        nid = len(nodes)
                        nodes.append(lift_from_plane(uv_pt, f.plane_point, f.plane_normal)[0])
                        local_centroid["bc"] = nid
                        interior_nodes.append(nid)
                    nid = local_centroid["bc"]
                else:
                    nid = loop[key]
                    boundary_nodes.add(nid)
            elif kind == "mid":
                a, b = key
                if isinstance(a, int) and isinstance(b, int):
                    ga, gb = loop[a], loop[b]
                    gkey = (ga, gb) if ga < gb else (gb, ga)
                    adjacent = abs(a - b) == 1 or {a, b} == {0, len(loop) - 1}
                    if adjacent:
                        # midpoint of an original facet edge: global registry
                        if gkey not in edge_midpoint:
                            nid = len(nodes)
                            nodes.append(0.5 * (cs.points[ga] + cs.points[gb]))
                            edge_midpoint[gkey] = nid
                        nid = edge_midpoint[gkey]
                        boundary_nodes.add(nid)
                        local_uv[nid] = uv_pt
                        node_owners.setdefault(nid, set()).update(owners)
                        return nid
                # interior cut edge: shared within this facet only
                if key not in local_mid:
                    nid = len(nodes)
                    nodes.append(lift_from_plane(uv_pt, f.plane_point, f.plane_normal)[0])
                    local_mid[key] = nid
                    interior_nodes.append(nid)
                nid = local_mid[key]
            else:  # centroid
                if key not in local_centroid:
                    nid = len(nodes)
                    nodes.append(lift_from_plane(uv_pt, f.plane_point, f.plane_normal)[0])
                    local_centroid[key] = nid
                    interior_nodes.append(nid)
                nid = local_centroid[key]
            local_uv[nid] = uv_pt
            node_owners.setdefault(nid, set()).update(owners)
            return nid

        quads = subdivide_to_quads(pieces, get_node)
        smoothed, _reverted = smooth_facet(local_uv, quads, interior_nodes, cfg.smooth_iters)
        for nid in interior_nodes:
            nodes[nid] = lift_from_plane(smoothed[nid], f.plane_point, f.plane_normal)[0]
        patches[fid] = FacetPatch(
            facet_id=fid,
            quads=[tuple(int(x) for x in q) for q in quads],
            boundary_nodes=boundary_nodes,
            interior_nodes=list(interior_nodes),
        )
        for v in loop:
            node_owners.setdefault(v, set()).update(owners)

    mesh = FacetQuadMesh(
        nodes=np.array(nodes),
        patches=patches,
        edge_midpoint=edge_midpoint,
        cellset=cs,
        node_owners=node_owners,
    )
    _guard_nodes(mesh, cfg.guard_radius * R)
    return mesh


def _guard_nodes(mesh: FacetQuadMesh, guard: float) -> None:
    """Push tessellation nodes outside every owning cell's guard sphere."""
    centers = mesh.cellset.bed.centers
    for nid in sorted(mesh.node_owners):
        for _ in range(10):
            worst, dworst = None, guard
            for c in sorted(mesh.node_owners[nid]):
                d = float(np.linalg.norm(mesh.nodes[nid] - centers[c]))
                if d < dworst:
                    worst, dworst = c, d
            if worst is None:
                break
            ray = mesh.nodes[nid] - centers[worst]
            mesh.nodes[nid] = centers[worst] + ray * (guard / dworst)
        else:
            raise GeometryError(f"tessellation node {nid} cannot clear the guard spheres")
