"""Hex mesh generation: sweep, merge, radial refinement, extrusion.

Every facet quad is swept onto the sphere bounded by its cell, giving one
hex layer per cell. Cells merge into a single conformal mesh through the
shared tessellation node pool. The layer is then split 55/45 along the
sweep direction, and extra layers are extruded: one inward on every
sphere, one outward on curved container walls, and inlet/outlet duct
layers on the z planes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .bed import Annulus, Box, Cylinder
from .errors import GeometryError, TopologyError, ValidationError
from .tessellate import FacetQuadMesh

log = logging.getLogger(__name__)

R0_DEFAULT = 0.8889  # sweep target radius, fraction of R

# local faces of a hex [b0 b1 b2 b3 t0 t1 t2 t3], each ordered so the loop
# is CCW seen from outside the element
FACES_OUT = (
    (0, 3, 2, 1),
    (4, 5, 6, 7),
    (0, 1, 5, 4),
    (1, 2, 6, 5),
    (2, 3, 7, 6),
    (3, 0, 4, 7),
)


@dataclass
class ExtrusionSpec:
    t_bl: float = 0.25      # boundary-layer thickness, fraction of local layer
    inlet_layers: int = 3
    outlet_layers: int = 7


@dataclass
class HexMesh:
    nodes: np.ndarray                  # (P, 3)
    elements: np.ndarray               # (E, 8) int64
    face_tags: dict                    # face key -> tag string
    surface_assoc: dict                # face key -> descriptor tuple
    face_loops: dict                   # face key -> outward-CCW node tuple
    elem_cell: np.ndarray              # (E,) owning sphere per element
    elem_layer: list                   # (E,) layer label: 0, 1, 'bl', 'wall', ...
    sphere_centers: np.ndarray
    sphere_radius: float | None        # current radius of sphere surfaces
    domain: object
    columns: list = field(default_factory=list)   # per cell: tess node -> {role: node}
    wall_outer: dict = field(default_factory=dict)  # interface node -> extruded node
    duct_parent: dict = field(default_factory=dict)  # duct node -> surface ancestor

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def copy(self) -> "HexMesh":
        return HexMesh(
            nodes=self.nodes.copy(),
            elements=self.elements.copy(),
            face_tags=dict(self.face_tags),
            surface_assoc=dict(self.surface_assoc),
            face_loops=dict(self.face_loops),
            elem_cell=self.elem_cell.copy(),
            elem_layer=list(self.elem_layer),
            sphere_centers=self.sphere_centers.copy(),
            sphere_radius=self.sphere_radius,
            domain=self.domain,
            columns=[dict(c) for c in self.columns],
            wall_outer=dict(self.wall_outer),
            duct_parent=dict(self.duct_parent),
        )


def face_key(loop) -> tuple:
    return tuple(sorted(int(v) for v in loop))


def classify_boundary_facet(facet, domain, R: float):
    """Map a ghost-tagged facet to (tag, descriptor) from its actual plane.

    Curved-wall reflections give tangent planes; z reflections give exact
    z planes; chained corner reflections give slanted chamfer planes that
    stay planar, tagged as wall.
    """
    n = facet.plane_normal
    p = facet.plane_point
    tol = 1e-6 * R
    if isinstance(domain, (Cylinder, Annulus)):
        cx, cy = domain.center_xy
        if abs(abs(n[2]) - 1.0) < 1e-9:
            if abs(p[2]) < tol:
                return "inlet", ("plane", 2, 0.0, -1)
            if abs(p[2] - domain.H) < tol:
                return "outlet", ("plane", 2, domain.H, 1)
        rad = np.hypot(p[0] - cx, p[1] - cy)
        radial = np.array([(p[0] - cx) / max(rad, 1e-300), (p[1] - cy) / max(rad, 1e-300), 0.0])
        align = float(n @ radial)
        if isinstance(domain, Cylinder):
            if abs(align - 1.0) < 1e-9 and abs(rad - domain.R_c) < tol:
                return "wall", ("cylinder", cx, cy, domain.R_c, 1)
        else:
            if abs(align - 1.0) < 1e-9 and abs(rad - domain.R_o) < tol:
                return "wall", ("cylinder", cx, cy, domain.R_o, 1)
            if abs(align + 1.0) < 1e-9 and abs(rad - domain.R_i) < tol:
                return "inner_wall", ("cylinder", cx, cy, domain.R_i, -1)
    elif isinstance(domain, Box):
        lo = domain.lo
        hi = domain.hi
        for axis in range(3):
            if abs(abs(n[axis]) - 1.0) < 1e-9:
                if abs(p[axis] - lo[axis]) < tol:
                    tag = "inlet" if axis == 2 else "wall"
                    return tag, ("plane", axis, lo[axis], -1)
                if abs(p[axis] - hi[axis]) < tol:
                    tag = "outlet" if axis == 2 else "wall"
                    return tag, ("plane", axis, hi[axis], 1)
    # chained (corner) reflection: keep the facet plane, call it wall
    return "wall", ("facet_plane", *(float(x) for x in p), *(float(x) for x in n))


def sweep(patches: FacetQuadMesh, R0: float = R0_DEFAULT) -> HexMesh:
    """Sweep every facet quad onto its cell sphere and merge the cells.

    Outer corners are the facet quad nodes; inner corners sit on the
    sphere of radius R0 about the cell center, along the center-node ray.
    One element layer per cell results; boundary facet quads carry the
    container surface association for later projection.
    """
    cs = patches.cellset
    R = cs.bed.radius_nominal
    centers = cs.bed.centers
    guard_floor = R0 * R
    used_tess = sorted({n for i in range(cs.n_real) for _, q in patches.cell_quads(i) for n in q})
    tess_id = {t: k for k, t in enumerate(used_tess)}
    nodes = [patches.nodes[t] for t in used_tess]
    inner_id: dict = {}
    columns = [dict() for _ in range(cs.n_real)]

    facet_info = {}
    for fid, f in enumerate(cs.facets):
        if f.deleted or f.boundary is None:
            continue
        facet_info[fid] = classify_boundary_facet(f, cs.bed.domain, R)

    elements = []
    elem_cell = []
    elem_layer = []
    face_tags: dict = {}
    surface_assoc: dict = {}
    face_loops: dict = {}

    for i in range(cs.n_real):
        c = centers[i]
        for fid, quad in patches.cell_quads(i):
            inner = []
            for t in quad:
                key = (i, t)
                if key not in inner_id:
                    ray = patches.nodes[t] - c
                    d = float(np.linalg.norm(ray))
                    if d < guard_floor:
                        raise GeometryError(
                            f"cell {i}: tessellation node {t} at {d:.4f} is inside "
                            f"the sweep radius {guard_floor:.4f}"
                        )
                    nid = len(nodes)
                    nodes.append(c + ray * (guard_floor / d))
                    inner_id[key] = nid
                    columns[i][t] = {"q": tess_id[t], "p": nid}
                inner.append(inner_id[key])
            outer = [tess_id[t] for t in quad]
            el = inner + outer
            if len(set(el)) != 8:
                raise GeometryError(f"degenerate hex in cell {i}, facet {fid}")
            eid = len(elements)
            elements.append(el)
            elem_cell.append(i)
            elem_layer.append(0)
            # tag the sphere-side face
            sph = tuple(el[k] for k in FACES_OUT[0])
            face_tags[face_key(sph)] = f"sphere:{i}"
            surface_assoc[face_key(sph)] = ("sphere", i)
            face_loops[face_key(sph)] = sph
            if fid in facet_info:
                tag, desc = facet_info[fid]
                top = tuple(el[k] for k in FACES_OUT[1])
                face_tags[face_key(top)] = tag
                surface_assoc[face_key(top)] = desc
                face_loops[face_key(top)] = top

    mesh = HexMesh(
        nodes=np.array(nodes),
        elements=np.array(elements, dtype=np.int64),
        face_tags=face_tags,
        surface_assoc=surface_assoc,
        face_loops=face_loops,
        elem_cell=np.array(elem_cell, dtype=np.int64),
        elem_layer=elem_layer,
        sphere_centers=centers.copy(),
        sphere_radius=guard_floor,
        domain=cs.bed.domain,
        columns=columns,
    )
    audit_conformal(mesh)
    return mesh


def audit_conformal(mesh: HexMesh) -> dict:
    """Exact hash-count conformality audit.

    Every interior quad face must be shared by exactly two elements with
    opposite orientation; every boundary face by exactly one, carrying
    exactly one tag. Raises TopologyError on any violation.
    """
    counts: dict = {}
    owners: dict = {}
    for eid, el in enumerate(mesh.elements):
        for lf in FACES_OUT:
            loop = tuple(int(el[k]) for k in lf)
            key = face_key(loop)
            counts[key] = counts.get(key, 0) + 1
            owners.setdefault(key, []).append(loop)
    n_boundary = 0
    for key, cnt in counts.items():
        if cnt == 1:
            n_boundary += 1
            if key not in mesh.face_tags:
                raise TopologyError(f"untagged boundary face {key}")
        elif cnt == 2:
            if key in mesh.face_tags:
                raise TopologyError(f"interior face {key} carries tag {mesh.face_tags[key]}")
            a, b = owners[key]
            ra = min(range(4), key=lambda k: a[k])
            rb = min(range(4), key=lambda k: b[k])
            fa = a[ra:] + a[:ra]
            fb = tuple(reversed(b))
            rb = min(range(4), key=lambda k: fb[k])
            fb = fb[rb:] + fb[:rb]
            if fa != fb:
                raise TopologyError(f"face {key} not oppositely oriented in its two owners")
        else:
            raise TopologyError(f"face {key} shared by {cnt} elements")
    for key in mesh.face_tags:
        if counts.get(key, 0) != 1:
            raise TopologyError(f"tagged face {key} is not a boundary face")
    referenced = set(int(v) for el in mesh.elements for v in el)
    if referenced != set(range(len(mesh.nodes))):
        raise TopologyError(
            f"orphan nodes: {len(mesh.nodes) - len(referenced)} unreferenced"
        )
    return {"boundary_faces": n_boundary, "interior_faces": sum(c == 2 for c in counts.values())}


def boundary_faces(mesh: HexMesh):
    """face key -> (loop, owner element id) for 1-valent faces."""
    counts: dict = {}
    for eid, el in enumerate(mesh.elements):
        for lf in FACES_OUT:
            loop = tuple(int(el[k]) for k in lf)
            counts.setdefault(face_key(loop), []).append((loop, eid))
    return {k: v[0] for k, v in counts.items() if len(v) == 1}


def refine_radial(mesh: HexMesh, split: float = 0.55) -> HexMesh:
    """Split each swept hex in two along the sweep direction.

    The cut sits at `split` of the thickness from the facet side, so the
    facet-side child is thicker (55/45 by default) and the element count
    exactly doubles. Refinement is radial per cell, so conformality with
    other cells is untouched.
    """
    if not (0.0 < split < 1.0):
        raise ValidationError("split must lie in (0, 1)")
    if any(layer != 0 for layer in mesh.elem_layer):
        raise ValidationError("refine_radial supports exactly one split; mesh already refined")
    nodes = [p for p in mesh.nodes]
    mid_id: dict = {}
    elements = []
    elem_cell = []
    elem_layer = []

    def midnode(p, q):
        key = (int(p), int(q))
        if key not in mid_id:
            mid_id[key] = len(nodes)
            nodes.append(mesh.nodes[q] + split * (mesh.nodes[p] - mesh.nodes[q]))
        return mid_id[key]

    face_tags = dict(mesh.face_tags)
    surface_assoc = dict(mesh.surface_assoc)
    face_loops = dict(mesh.face_loops)
    for eid, el in enumerate(mesh.elements):
        p = [int(v) for v in el[:4]]
        q = [int(v) for v in el[4:]]
        m = [midnode(a, b) for a, b in zip(p, q)]
        child_facet = m + q
        child_sphere = p + m
        elements.append(child_facet)
        elem_cell.append(mesh.elem_cell[eid])
        elem_layer.append(0)
        elements.append(child_sphere)
        elem_cell.append(mesh.elem_cell[eid])
        elem_layer.append(1)
        # a tag on a lateral face splits onto the two child halves
        for fi in range(2, 6):
            loop = tuple(int(el[k]) for k in FACES_OUT[fi])
            key = face_key(loop)
            if key in face_tags:
                tag = face_tags.pop(key)
                desc = surface_assoc.pop(key)
                face_loops.pop(key)
                for child in (child_facet, child_sphere):
                    cl = tuple(child[k] for k in FACES_OUT[fi])
                    face_tags[face_key(cl)] = tag
                    surface_assoc[face_key(cl)] = desc
                    face_loops[face_key(cl)] = cl

    out = HexMesh(
        nodes=np.array(nodes),
        elements=np.array(elements, dtype=np.int64),
        face_tags=face_tags,
        surface_assoc=surface_assoc,
        face_loops=face_loops,
        elem_cell=np.array(elem_cell, dtype=np.int64),
        elem_layer=elem_layer,
        sphere_centers=mesh.sphere_centers,
        sphere_radius=mesh.sphere_radius,
        domain=mesh.domain,
        columns=[dict(c) for c in mesh.columns],
        wall_outer=dict(mesh.wall_outer),
        duct_parent=dict(mesh.duct_parent),
    )
    for i, cols in enumerate(out.columns):
        for t, roles in cols.items():
            key = (roles["p"], roles["q"])
            if key in mid_id:
                roles["m"] = mid_id[key]
    audit_conformal(out)
    return out


def _retag(mesh, old_key, new_loop, tag, desc):
    mesh.face_tags.pop(old_key, None)
    mesh.surface_assoc.pop(old_key, None)
    mesh.face_loops.pop(old_key, None)
    k = face_key(new_loop)
    mesh.face_tags[k] = tag
    mesh.surface_assoc[k] = desc
    mesh.face_loops[k] = tuple(int(v) for v in new_loop)


def extrude_layers(mesh: HexMesh, spec: ExtrusionSpec | None = None) -> HexMesh:
    """Add boundary layers: spheres inward, curved walls outward, z ducts.

    Sphere faces gain one thin layer toward the sphere (fraction t_bl of
    the local radial layer; the new surface radius feeds the final
    projection). Curved-wall faces gain one thin outward layer whose outer
    surface later lands on the analytic wall. The inlet plane grows 3 duct
    layers downward and the outlet 7 upward.
    """
    spec = spec or ExtrusionSpec()
    if 1 not in set(mesh.elem_layer):
        raise ValidationError("extrude_layers expects a radially refined mesh")
    out = mesh.copy()
    nodes = [p for p in out.nodes]

    col_of_p = {}
    for i, cols in enumerate(out.columns):
        for t, roles in cols.items():
            col_of_p[roles["p"]] = (i, t)

    # --- sphere boundary layers -------------------------------------------
    sphere_faces = [(k, out.face_loops[k], out.surface_assoc[k])
                    for k, tag in sorted(out.face_tags.items())
                    if tag.startswith("sphere:")]
    new_inner: dict = {}
    new_elements = []
    new_cell = []
    new_layer = []
    for key, loop, desc in sphere_faces:
        i = desc[1]
        c = out.sphere_centers[i]
        rev = tuple(reversed(loop))
        b = []
        for p in rev:
            if p not in new_inner:
                ci, t = col_of_p[p]
                m = out.columns[ci][t]["m"]
                thick = float(np.linalg.norm(out.nodes[p] - nodes[m]))
                ray = out.nodes[p] - c
                rho = float(np.linalg.norm(ray))
                target = rho - spec.t_bl * thick
                if target <= 0.5:
                    raise GeometryError(
                        f"sphere {i}: boundary-layer extrusion reaches {target:.3f}R"
                    )
                nid = len(nodes)
                nodes.append(c + ray * (target / rho))
                new_inner[p] = nid
                out.columns[ci][t]["b"] = nid
            b.append(new_inner[p])
        el = b + list(rev)
        new_elements.append(el)
        new_cell.append(i)
        new_layer.append("bl")
        bottom = tuple(el[k] for k in FACES_OUT[0])
        _retag(out, key, bottom, f"sphere:{i}", desc)
    out.sphere_radius = None  # surface is no longer a single sphere

    # --- curved-wall layers -------------------------------------------------
    wall_faces = [(k, out.face_loops[k], out.surface_assoc[k], out.face_tags[k])
                  for k, tag in sorted(out.face_tags.items())
                  if tag in ("wall", "inner_wall") and out.surface_assoc[k][0] == "cylinder"]
    if wall_faces:
        # uniform thickness from the mean sweep thickness of the wall hexes
        heights = []
        face_owner = boundary_faces(out)
        for key, loop, desc, tag in wall_faces:
            _, eid = face_owner[key]
            el = out.elements[eid]
            heights.extend(
                float(np.linalg.norm(out.nodes[el[k]] - out.nodes[el[k + 4]])) for k in range(4)
            )
        t_w = spec.t_bl * float(np.mean(heights))
        normals: dict = {}
        for key, loop, desc, tag in wall_faces:
            pts = np.array([nodes[v] for v in loop])
            n = np.cross(pts[1] - pts[0], pts[3] - pts[0])
            n /= np.linalg.norm(n)
            for v in loop:
                normals.setdefault(v, []).append(n)
        wall_new: dict = {}
        for v in sorted(normals):
            n = np.mean(normals[v], axis=0)
            n /= np.linalg.norm(n)
            nid = len(nodes)
            nodes.append(nodes[v] + t_w * n)
            wall_new[v] = nid
            out.wall_outer[v] = nid
        edge_count: dict = {}
        for key, loop, desc, tag in wall_faces:
            for a, b in zip(loop, loop[1:] + loop[:1]):
                ek = (a, b) if a < b else (b, a)
                edge_count[ek] = edge_count.get(ek, 0) + 1
        tagged_edges: dict = {}
        for k2, loop2 in out.face_loops.items():
            for a, b in zip(loop2, loop2[1:] + loop2[:1]):
                ek = (a, b) if a < b else (b, a)
                tagged_edges.setdefault(ek, []).append(k2)
        for key, loop, desc, tag in wall_faces:
            _, eid = face_owner[key]
            w = [wall_new[v] for v in loop]
            el = list(loop) + w
            new_elements.append(el)
            new_cell.append(out.elem_cell[eid])
            new_layer.append("wall")
            top = tuple(el[k] for k in FACES_OUT[1])
            _retag(out, key, top, tag, desc)
            for a, b in zip(loop, loop[1:] + loop[:1]):
                ek = (a, b) if a < b else (b, a)
                if edge_count[ek] == 2:
                    continue
                side_tags = [k2 for k2 in tagged_edges.get(ek, []) if k2 != key
                             and k2 in out.face_tags]
                if not side_tags:
                    raise TopologyError(f"exposed wall-layer side at edge {ek} has no donor tag")
                donor = side_tags[0]
                side = (a, b, wall_new[b], wall_new[a])  # outward-CCW side face
                sk = face_key(side)
                out.face_tags[sk] = out.face_tags[donor]
                out.surface_assoc[sk] = out.surface_assoc[donor]
                out.face_loops[sk] = side

    # --- inlet / outlet ducts ------------------------------------------------
    out.nodes = np.array(nodes)
    if new_elements:
        out.elements = np.vstack([out.elements, np.array(new_elements, dtype=np.int64)])
        out.elem_cell = np.concatenate([out.elem_cell, np.array(new_cell, dtype=np.int64)])
        out.elem_layer = out.elem_layer + new_layer
    for kind, zdir, nlayers in (("inlet", -1.0, spec.inlet_layers),
                                ("outlet", 1.0, spec.outlet_layers)):
        if nlayers <= 0:
            continue
        _extrude_duct(out, kind, zdir, nlayers)
    audit_conformal(out)
    return out


def _extrude_duct(mesh: HexMesh, kind: str, zdir: float, nlayers: int) -> None:
    faces = [(k, mesh.face_loops[k], mesh.surface_assoc[k])
             for k, tag in sorted(mesh.face_tags.items()) if tag == kind]
    if not faces:
        return
    face_owner = boundary_faces(mesh)
    heights = []
    for key, loop, desc in faces:
        _, eid = face_owner[key]
        el = mesh.elements[eid]
        heights.extend(
            float(np.linalg.norm(mesh.nodes[el[k]] - mesh.nodes[el[k + 4]])) for k in range(4)
        )
    t = float(np.mean(heights))
    nodes = [p for p in mesh.nodes]
    stacks: dict = {}
    for key, loop, desc in faces:
        for v in loop:
            if v not in stacks:
                col = []
                for k in range(1, nlayers + 1):
                    nid = len(nodes)
                    p = nodes[v].copy()
                    p[2] += zdir * k * t
                    nodes.append(p)
                    mesh.duct_parent[nid] = int(v)
                    col.append(nid)
                stacks[v] = col
    edge_count: dict = {}
    for key, loop, desc in faces:
        for a, b in zip(loop, loop[1:] + loop[:1]):
            ek = (a, b) if a < b else (b, a)
            edge_count[ek] = edge_count.get(ek, 0) + 1
    tagged_edges: dict = {}
    for k2, loop2 in mesh.face_loops.items():
        for a, b in zip(loop2, loop2[1:] + loop2[:1]):
            ek = (a, b) if a < b else (b, a)
            tagged_edges.setdefault(ek, []).append(k2)
    new_elements = []
    for key, loop, desc in faces:
        _, eid = face_owner[key]
        prev = list(loop)
        for k in range(nlayers):
            cur = [stacks[v][k] for v in loop]
            el = prev + cur
            new_elements.append((el, mesh.elem_cell[eid], f"{kind}{k + 1}"))
            for a_i in range(4):
                a, b = loop[a_i], loop[(a_i + 1) % 4]
                ek = (a, b) if a < b else (b, a)
                if edge_count[ek] == 2:
                    continue
                donors = [k2 for k2 in tagged_edges.get(ek, []) if k2 != key
                          and k2 in mesh.face_tags]
                if not donors:
                    raise TopologyError(f"exposed duct side at edge {ek} has no donor tag")
                donor = donors[0]
                pa = prev[a_i]
                pb = prev[(a_i + 1) % 4]
                side = (pa, pb, cur[(a_i + 1) % 4], cur[a_i])  # outward-CCW
                sk = face_key(side)
                mesh.face_tags[sk] = mesh.face_tags[donor]
                mesh.surface_assoc[sk] = mesh.surface_assoc[donor]
                mesh.face_loops[sk] = side
            prev = cur
        axis, value, sense = desc[1], desc[2], desc[3]
        new_value = value + zdir * nlayers * t
        _retag(mesh, key, tuple(prev), kind, ("plane", axis, new_value, sense))
    mesh.nodes = np.array(nodes)
    els = np.array([e for e, _, _ in new_elements], dtype=np.int64)
    mesh.elements = np.vstack([mesh.elements, els])
    mesh.elem_cell = np.concatenate(
        [mesh.elem_cell, np.array([c for _, c, _ in new_elements], dtype=np.int64)]
    )
    mesh.elem_layer = mesh.elem_layer + [lbl for _, _, lbl in new_elements]


def corner_jacobians(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """(E, 8, 3, 3) Jacobian of the trilinear map at each hex corner.

    Columns are d x / d r_k; for the unit cube with standard ordering all
    determinants equal 1/8.
    """
    x = nodes[elements]  # (E, 8, 3)
    # adjacency along each reference axis, and the sign of that corner's
    # reference coordinate on the axis
    adj = np.array([
        [1, 3, 4], [0, 2, 5], [3, 1, 6], [2, 0, 7],
        [5, 7, 0], [4, 6, 1], [7, 5, 2], [6, 4, 3],
    ])
    sign = np.array([
        [-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
        [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1],
    ])
    J = np.empty((len(elements), 8, 3, 3))
    for c in range(8):
        for k in range(3):
            J[:, c, :, k] = -sign[c, k] * (x[:, adj[c, k], :] - x[:, c, :]) / 2.0
    return J


def corner_dets(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    return np.linalg.det(corner_jacobians(nodes, elements))
