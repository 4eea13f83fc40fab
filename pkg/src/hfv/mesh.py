"""Polygonal meshes of the unit square for hybrid finite volume schemes.

A mesh is a set of simple polygonal cells K (counterclockwise vertex rings,
hanging nodes allowed) together with the set of faces (straight edges) that
partition the mesh skeleton.  Each cell K carries a center x_K that K is
star-shaped with respect to; for every face sigma of K the triangle ("pyramid")
P_{K,sigma} spanned by x_K and sigma has area |sigma| d_{K,sigma} / 2, where
d_{K,sigma} > 0 is the orthogonal distance from x_K to the line of sigma.

The incidence data is stored flat: for every (cell, face) pair there is one
row in the cf_* arrays, ordered cell by cell (CSR-style, offsets in cell_ptr).
This is the layout all local assembly in the package is vectorized over.
"""

from __future__ import annotations

import math

import numpy as np

TAG_INTERIOR = 0
TAG_DIRICHLET = 1
TAG_NEUMANN = 2

# Geometric tolerances: coordinates live in [0,1], so absolute scales are fine.
_BOUNDARY_TOL = 1e-9
_AREA_TOL = 1e-13
_DEDUP_DECIMALS = 12


class MeshError(Exception):
    """Invalid mesh data (parse errors, broken geometry, bad topology)."""


class Mesh:
    """Immutable polygonal mesh with flattened cell-face incidence arrays.

    Attributes
    ----------
    vertices : (V, 2) float array
    face_vertices : (F, 2) int array, endpoint indices of each face
    face_centers : (F, 2) float array, face midpoints
    face_lengths : (F,) float array
    face_cells : (F, 2) int array, owner cells (-1 when absent)
    face_tag : (F,) int8 array, TAG_INTERIOR / TAG_DIRICHLET / TAG_NEUMANN
    cell_ptr : (M+1,) int array, CSR offsets into the cf_* arrays
    cf_cell, cf_face : (E,) int arrays, one row per (cell, face) pair
    cf_normal : (E, 2) float array, unit normal of the face, outward for cf_cell
    cf_d : (E,) float array, distances d_{K,sigma} (all positive)
    cf_pvol : (E,) float array, pyramid areas |sigma| d_{K,sigma} / 2
    cell_area, cell_diameter, cell_perimeter : (M,) float arrays
    cell_center : (M, 2) float array
    """

    def __init__(self, vertices, face_vertices, face_centers, face_lengths,
                 face_cells, face_tag, cell_ptr, cf_cell, cf_face, cf_normal,
                 cf_d, cf_pvol, cell_area, cell_center, cell_diameter,
                 cell_perimeter):
        self.vertices = vertices
        self.face_vertices = face_vertices
        self.face_centers = face_centers
        self.face_lengths = face_lengths
        self.face_cells = face_cells
        self.face_tag = face_tag
        self.cell_ptr = cell_ptr
        self.cf_cell = cf_cell
        self.cf_face = cf_face
        self.cf_normal = cf_normal
        self.cf_d = cf_d
        self.cf_pvol = cf_pvol
        self.cell_area = cell_area
        self.cell_center = cell_center
        self.cell_diameter = cell_diameter
        self.cell_perimeter = cell_perimeter
        self.cell_nfaces = np.diff(cell_ptr)
        # Cells grouped by face count: list of (m, cells (g,), rows (g, m)),
        # rows indexing into the cf_* arrays.  All batched local assembly
        # (einsum over per-cell m x m matrices) runs over these groups.
        self.groups = []
        for m in np.unique(self.cell_nfaces):
            cells = np.nonzero(self.cell_nfaces == m)[0]
            rows = cell_ptr[cells][:, None] + np.arange(m)[None, :]
            self.groups.append((int(m), cells, rows))

    @property
    def n_cells(self):
        return self.cell_area.shape[0]

    @property
    def n_faces(self):
        return self.face_lengths.shape[0]

    @property
    def n_cf(self):
        return self.cf_cell.shape[0]

    @property
    def h(self):
        """Mesh size: largest cell diameter."""
        return float(self.cell_diameter.max())

    @property
    def h_tilde(self):
        """Area-to-perimeter mesh size max_K |K| / |dK| (convergence-plot size)."""
        return float((self.cell_area / self.cell_perimeter).max())

    @property
    def theta(self):
        """Shape-regularity measure max(h_K/d_{K,sigma}, h_K/|sigma|) >= 1."""
        h_K = self.cell_diameter[self.cf_cell]
        lens = self.face_lengths[self.cf_face]
        return float(max((h_K / self.cf_d).max(), (h_K / lens).max()))

    @property
    def boundary_faces(self):
        return np.nonzero(self.face_tag != TAG_INTERIOR)[0]

    @property
    def dirichlet_faces(self):
        return np.nonzero(self.face_tag == TAG_DIRICHLET)[0]

    @property
    def neumann_faces(self):
        return np.nonzero(self.face_tag == TAG_NEUMANN)[0]

    def __repr__(self):
        return (f"Mesh(cells={self.n_cells}, faces={self.n_faces}, "
                f"h={self.h:.4g}, theta={self.theta:.3g})")


def _on_unit_boundary(points):
    """Boolean mask: which points lie on the boundary of [0,1]^2."""
    x, y = points[:, 0], points[:, 1]
    return ((np.abs(x) <= _BOUNDARY_TOL) | (np.abs(x - 1) <= _BOUNDARY_TOL)
            | (np.abs(y) <= _BOUNDARY_TOL) | (np.abs(y - 1) <= _BOUNDARY_TOL))


def _check_simple(ring, where):
    """Reject rings whose non-adjacent edges properly intersect."""
    k = len(ring)
    pts = ring

    def ccw(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    for i in range(k):
        a, b = pts[i], pts[(i + 1) % k]
        for j in range(i + 2, k):
            if i == 0 and j == k - 1:
                continue  # adjacent through the wrap-around vertex
            c, d = pts[j], pts[(j + 1) % k]
            if ccw(a, b, c) * ccw(a, b, d) < 0 and ccw(c, d, a) * ccw(c, d, b) < 0:
                raise MeshError(f"{where}: cell boundary is self-intersecting")


def build_mesh(vertices, cell_rings, centers=None, cell_lines=None,
               check_simple=True):
    """Assemble a Mesh from vertex coordinates and CCW cell rings.

    Parameters
    ----------
    vertices : (V, 2) array-like
    cell_rings : sequence of int sequences, counterclockwise, >= 3 vertices
    centers : optional (M, 2) array of cell centers; polygon centroids if None
    cell_lines : optional per-cell source line numbers for error messages
    check_simple : run the O(k^2) per-cell self-intersection check
    """
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertex array must have shape (V, 2)")
    n_vert = vertices.shape[0]
    n_cells = len(cell_rings)
    if n_cells == 0:
        raise MeshError("mesh has no cells")

    def where(i):
        if cell_lines is not None:
            return f"line {cell_lines[i]}"
        return f"cell {i}"

    if (vertices < -_BOUNDARY_TOL).any() or (vertices > 1 + _BOUNDARY_TOL).any():
        raise MeshError("vertex coordinates must lie in the unit square")

    used = np.zeros(n_vert, dtype=bool)
    cell_area = np.empty(n_cells)
    cell_center = np.empty((n_cells, 2))
    cell_diameter = np.empty(n_cells)
    cell_perimeter = np.empty(n_cells)

    face_ids = {}
    face_vertex_list = []
    face_owner1 = []
    face_owner2 = []

    cell_ptr = np.zeros(n_cells + 1, dtype=np.int64)
    cf_cell_list = []
    cf_face_list = []
    cf_normal_list = []

    for i, ring in enumerate(cell_rings):
        ring = list(ring)
        k = len(ring)
        if k < 3:
            raise MeshError(f"{where(i)}: cell needs at least 3 vertices, got {k}")
        if min(ring) < 0 or max(ring) >= n_vert:
            raise MeshError(f"{where(i)}: vertex index out of range")
        used[ring] = True
        pts = vertices[ring]
        nxt = np.roll(pts, -1, axis=0)
        edge = nxt - pts
        elen = np.hypot(edge[:, 0], edge[:, 1])
        if (elen <= 1e-14).any():
            raise MeshError(f"{where(i)}: zero-length edge (repeated vertex)")
        cross = pts[:, 0] * nxt[:, 1] - nxt[:, 0] * pts[:, 1]
        area2 = cross.sum()
        if area2 <= 2 * _AREA_TOL:
            if area2 < -2 * _AREA_TOL:
                raise MeshError(f"{where(i)}: cell vertices must be ordered "
                                "counterclockwise")
            raise MeshError(f"{where(i)}: degenerate cell (zero area)")
        area = 0.5 * area2
        if check_simple:
            _check_simple(pts, where(i))
        cell_area[i] = area
        # Polygon centroid; overridden below when explicit centers are given.
        cell_center[i] = (pts + nxt).T @ cross / (6.0 * area)
        dif = pts[:, None, :] - pts[None, :, :]
        cell_diameter[i] = np.sqrt((dif ** 2).sum(axis=2).max())
        cell_perimeter[i] = elen.sum()

        cell_ptr[i + 1] = cell_ptr[i] + k
        for a_loc in range(k):
            va, vb = ring[a_loc], ring[(a_loc + 1) % k]
            key = (va, vb) if va < vb else (vb, va)
            fid = face_ids.get(key)
            if fid is None:
                fid = len(face_vertex_list)
                face_ids[key] = fid
                face_vertex_list.append((va, vb))
                face_owner1.append(i)
                face_owner2.append(-1)
            else:
                if face_owner2[fid] != -1:
                    raise MeshError(f"{where(i)}: face {va}-{vb} shared by "
                                    "more than two cells")
                face_owner2[fid] = i
            cf_cell_list.append(i)
            cf_face_list.append(fid)
            # Outward unit normal of a CCW ring edge: rotate the edge vector
            # clockwise by 90 degrees.
            t = edge[a_loc] / elen[a_loc]
            cf_normal_list.append((t[1], -t[0]))

    unused = np.nonzero(~used)[0]
    if unused.size:
        raise MeshError(f"dangling vertex {unused[0]} (referenced by no cell)")

    if centers is not None:
        centers = np.asarray(centers, dtype=float)
        if centers.shape != (n_cells, 2):
            raise MeshError("centers array must have shape (M, 2)")
        cell_center = centers

    face_vertices = np.array(face_vertex_list, dtype=np.int64)
    face_cells = np.column_stack([face_owner1, face_owner2]).astype(np.int64)
    fa = vertices[face_vertices[:, 0]]
    fb = vertices[face_vertices[:, 1]]
    face_centers = 0.5 * (fa + fb)
    face_lengths = np.hypot(*(fb - fa).T)

    cf_cell = np.array(cf_cell_list, dtype=np.int64)
    cf_face = np.array(cf_face_list, dtype=np.int64)
    cf_normal = np.array(cf_normal_list, dtype=float)
    cf_d = np.einsum("ij,ij->i",
                     face_centers[cf_face] - cell_center[cf_cell], cf_normal)
    bad = np.nonzero(cf_d <= 1e-14)[0]
    if bad.size:
        c = int(cf_cell[bad[0]])
        raise MeshError(f"{where(c)}: cell center is not strictly inside the "
                        "cone of face " + str(int(cf_face[bad[0]])) +
                        " (star-shapedness violated)")
    cf_pvol = 0.5 * face_lengths[cf_face] * cf_d

    # Boundary faces have exactly one owner and must lie on the boundary of
    # the unit square; a single-owner interior face means the cell rings do
    # not share hanging-node vertices consistently.
    single = face_cells[:, 1] == -1
    if single.any():
        ends_ok = (_on_unit_boundary(fa) & _on_unit_boundary(fb))[single]
        if not ends_ok.all():
            fid = np.nonzero(single)[0][np.nonzero(~ends_ok)[0][0]]
            raise MeshError(f"face {fid} has a single owner but does not lie "
                            "on the domain boundary (non-conforming interface)")
    face_tag = np.where(single, TAG_DIRICHLET, TAG_INTERIOR).astype(np.int8)

    total = cell_area.sum()
    if abs(total - 1.0) > 1e-8:
        raise MeshError(f"cell areas sum to {total!r}, expected 1 "
                        "(mesh must tile the unit square)")

    return Mesh(vertices, face_vertices, face_centers, face_lengths,
                face_cells, face_tag, cell_ptr, cf_cell, cf_face, cf_normal,
                cf_d, cf_pvol, cell_area, cell_center, cell_diameter,
                cell_perimeter)


# ---------------------------------------------------------------------------
# Generated families
# ---------------------------------------------------------------------------

def _grid_vertices(n, y_of):
    """(n+1)^2 vertex grid, index (i, j) -> i*(n+1)+j, y possibly displaced."""
    idx = np.arange(n + 1)
    xs = idx / n
    verts = np.empty(((n + 1) ** 2, 2))
    for i in range(n + 1):
        for j in range(n + 1):
            verts[i * (n + 1) + j] = (xs[i], y_of(xs[i], xs[j]))
    return verts


def _cartesian(n):
    verts = _grid_vertices(n, lambda x, y: y)
    cells = []
    for i in range(n):
        for j in range(n):
            v00 = i * (n + 1) + j
            v10 = (i + 1) * (n + 1) + j
            cells.append([v00, v10, v10 + 1, v00 + 1])
    return verts, cells


def _triangular(n):
    # Criss-cross pattern: every grid square is split by one diagonal, the
    # direction alternating like a checkerboard, giving 2 n^2 triangles.
    verts = _grid_vertices(n, lambda x, y: y)
    cells = []
    for i in range(n):
        for j in range(n):
            v00 = i * (n + 1) + j
            v01 = v00 + 1
            v10 = (i + 1) * (n + 1) + j
            v11 = v10 + 1
            if (i + j) % 2 == 0:
                cells.append([v00, v10, v11])
                cells.append([v00, v11, v01])
            else:
                cells.append([v00, v10, v01])
                cells.append([v10, v11, v01])
    return verts, cells


def _kershaw(n, distortion):
    # Sinusoidal layer shift: interior horizontal grid lines are displaced by
    # a * (min(y, 1-y)/2) * sin(2 pi x).  For a < 1 adjacent layers cannot
    # cross, so the cells stay convex vertical-sided trapezoids tiling the
    # square exactly; the boundary rows y = 0, 1 are fixed.
    if not 0 <= distortion < 1:
        raise MeshError("kershaw distortion must lie in [0, 1)")

    def y_of(x, y):
        return y + distortion * 0.5 * min(y, 1 - y) * math.sin(2 * math.pi * x)

    verts = _grid_vertices(n, y_of)
    _, cells = _cartesian(n)
    return verts, cells


def _clip_halfplane(poly, axis, lo, sign):
    """Sutherland-Hodgman step: keep the side sign*(coord - lo) >= 0."""
    out = []
    k = len(poly)
    for idx in range(k):
        p, q = poly[idx], poly[(idx + 1) % k]
        dp = sign * (p[axis] - lo)
        dq = sign * (q[axis] - lo)
        if dp >= -1e-12:
            out.append(p)
            if dq < -1e-12 and dp > 1e-12:
                t = dp / (dp - dq)
                out.append(p + t * (q - p))
        elif dq >= -1e-12:
            t = dp / (dp - dq)
            out.append(p + t * (q - p))
    return out


def _tilted_hexagonal(n, tilt):
    # Flat-top hexagon lattice (circumradius R = 1/(1.5 n)), rotated by the
    # tilt angle about the domain center and clipped to the unit square.
    # Interior cells are regular hexagons; boundary cells are the clipped
    # polygons.  Vertices are deduplicated by rounded coordinates so shared
    # lattice points snap to identical floats.
    R = 1.0 / (1.5 * n)
    s = math.sqrt(3.0) * R / 2.0
    offsets = np.array([(R, 0.0), (R / 2, s), (-R / 2, s),
                        (-R, 0.0), (-R / 2, -s), (R / 2, -s)])
    ct, st = math.cos(tilt), math.sin(tilt)
    rot = np.array([[ct, -st], [st, ct]])

    # Lattice centered on the domain center; cover the rotated square (its
    # preimage fits in the disk of radius sqrt(2)/2 about (0.5, 0.5)).
    reach = math.sqrt(2) / 2 + 2 * R
    imax = int(math.ceil(reach / (1.5 * R))) + 1
    jmax = int(math.ceil(reach / (2 * s))) + 1

    vert_ids = {}
    verts = []
    cells = []

    def vid(p):
        key = (round(p[0], _DEDUP_DECIMALS), round(p[1], _DEDUP_DECIMALS))
        i = vert_ids.get(key)
        if i is None:
            i = len(verts)
            vert_ids[key] = i
            verts.append(key)
        return i

    for i in range(-imax, imax + 1):
        for j in range(-jmax, jmax + 1):
            cx = 0.5 + 1.5 * R * i
            cy = 0.5 + 2 * s * j + (s if i % 2 else 0.0)
            hexagon = np.array([cx, cy]) + offsets
            hexagon = (hexagon - 0.5) @ rot.T + 0.5
            poly = [p for p in hexagon]
            for axis, lo, sign in ((0, 0.0, 1), (0, 1.0, -1),
                                   (1, 0.0, 1), (1, 1.0, -1)):
                poly = _clip_halfplane(poly, axis, lo, sign)
                if len(poly) < 3:
                    break
            if len(poly) < 3:
                continue
            pts = np.array(poly)
            # Snap onto the boundary and drop consecutive duplicates.
            for v in (0.0, 1.0):
                pts[np.abs(pts - v) <= _BOUNDARY_TOL] = v
            ring = []
            for p in pts:
                i_v = vid(p)
                if not ring or (i_v != ring[-1] and i_v != ring[0]):
                    ring.append(i_v)
            if len(ring) < 3:
                continue
            coords = np.array([verts[iv] for iv in ring])
            nxt = np.roll(coords, -1, axis=0)
            area = 0.5 * (coords[:, 0] * nxt[:, 1] - nxt[:, 0] * coords[:, 1]).sum()
            if area <= _AREA_TOL:
                continue
            cells.append(ring)

    return np.array(verts, dtype=float), cells


_FAMILIES = {
    "cartesian": lambda n, p: _cartesian(n),
    "triangular": lambda n, p: _triangular(n),
    "kershaw": lambda n, p: _kershaw(n, p.get("distortion", 0.6)),
    "tilted_hexagonal": lambda n, p: _tilted_hexagonal(
        n, p.get("tilt", math.pi / 6)),
}


def generate(family, n, **params):
    """Generate a mesh of the unit square.

    family : 'cartesian' | 'triangular' | 'kershaw' | 'tilted_hexagonal'
    n : resolution (cells per direction; lattice density for hexagons)
    params : family parameters (kershaw: distortion in [0,1);
             tilted_hexagonal: tilt angle in radians)
    """
    if family not in _FAMILIES:
        raise MeshError(f"unknown mesh family {family!r}; expected one of "
                        + ", ".join(sorted(_FAMILIES)))
    if not isinstance(n, int) or n < 1:
        raise MeshError("mesh resolution must be a positive integer")
    verts, cells = _FAMILIES[family](n, params)
    # Generated rings are simple by construction; skip the quadratic check.
    return build_mesh(verts, cells, check_simple=False)


# ---------------------------------------------------------------------------
# polymesh v1 file format
# ---------------------------------------------------------------------------

def parse_polymesh(text):
    """Parse the 'polymesh v1' plain-text format.

    Layout: a 'polymesh v1' header line; 'vertices N' followed by N 'x y'
    lines; 'cells M' followed by M 'k i1 ... ik' lines (0-based CCW rings);
    optionally 'centers M' followed by M 'x y' lines.  Blank lines are
    ignored.  Raises MeshError with 1-based line numbers on malformed input.
    """
    lines = text.splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines):
            stripped = lines[pos].strip()
            pos += 1
            if stripped:
                return stripped, pos
        return None, pos

    header, ln = next_line()
    if header is None or header.split() != ["polymesh", "v1"]:
        raise MeshError(f"line {ln}: expected 'polymesh v1' header")

    def section(name):
        tok, ln = next_line()
        if tok is None:
            raise MeshError(f"line {ln}: unexpected end of file, "
                            f"expected '{name} N'")
        parts = tok.split()
        if len(parts) != 2 or parts[0] != name:
            raise MeshError(f"line {ln}: expected '{name} N', got {tok!r}")
        try:
            count = int(parts[1])
        except ValueError:
            raise MeshError(f"line {ln}: invalid count in '{name}' header")
        if count < 0:
            raise MeshError(f"line {ln}: negative count in '{name}' header")
        return count

    n_vert = section("vertices")
    verts = np.empty((n_vert, 2))
    for i in range(n_vert):
        tok, ln = next_line()
        if tok is None:
            raise MeshError(f"line {ln}: unexpected end of file in vertex list")
        parts = tok.split()
        if len(parts) != 2:
            raise MeshError(f"line {ln}: vertex line must be 'x y'")
        try:
            verts[i] = (float(parts[0]), float(parts[1]))
        except ValueError:
            raise MeshError(f"line {ln}: invalid vertex coordinate")

    n_cells = section("cells")
    cells = []
    cell_lines = []
    for _ in range(n_cells):
        tok, ln = next_line()
        if tok is None:
            raise MeshError(f"line {ln}: unexpected end of file in cell list")
        parts = tok.split()
        try:
            nums = [int(p) for p in parts]
        except ValueError:
            raise MeshError(f"line {ln}: invalid cell line (integers expected)")
        if not nums or len(nums) != nums[0] + 1:
            raise MeshError(f"line {ln}: cell line must be 'k i1 ... ik'")
        cells.append(nums[1:])
        cell_lines.append(ln)

    centers = None
    tok, ln = next_line()
    if tok is not None:
        parts = tok.split()
        if parts[0] != "centers" or len(parts) != 2:
            raise MeshError(f"line {ln}: unexpected content {tok!r}")
        try:
            n_cent = int(parts[1])
        except ValueError:
            raise MeshError(f"line {ln}: invalid count in 'centers' header")
        if n_cent != n_cells:
            raise MeshError(f"line {ln}: centers count must equal cell count")
        centers = np.empty((n_cells, 2))
        for i in range(n_cells):
            tok, ln = next_line()
            if tok is None:
                raise MeshError(f"line {ln}: unexpected end of file in "
                                "center list")
            parts = tok.split()
            if len(parts) != 2:
                raise MeshError(f"line {ln}: center line must be 'x y'")
            try:
                centers[i] = (float(parts[0]), float(parts[1]))
            except ValueError:
                raise MeshError(f"line {ln}: invalid center coordinate")
        tok, ln = next_line()
        if tok is not None:
            raise MeshError(f"line {ln}: unexpected trailing content {tok!r}")

    return verts, cells, centers, cell_lines


def read_polymesh(text):
    """Build a Mesh from 'polymesh v1' text."""
    verts, cells, centers, cell_lines = parse_polymesh(text)
    return build_mesh(verts, cells, centers=centers, cell_lines=cell_lines)


def load_mesh(path):
    """Read a 'polymesh v1' file from disk."""
    with open(path, "r", encoding="utf-8") as fh:
        return read_polymesh(fh.read())


def write_polymesh(mesh, include_centers=False):
    """Serialize a Mesh back to 'polymesh v1' text (cells as stored rings)."""
    out = ["polymesh v1", f"vertices {mesh.vertices.shape[0]}"]
    for x, y in mesh.vertices:
        out.append(f"{float(x)!r} {float(y)!r}")
    rings = cell_rings(mesh)
    out.append(f"cells {mesh.n_cells}")
    for ring in rings:
        out.append(" ".join([str(len(ring))] + [str(v) for v in ring]))
    if include_centers:
        out.append(f"centers {mesh.n_cells}")
        for x, y in mesh.cell_center:
            out.append(f"{float(x)!r} {float(y)!r}")
    return "\n".join(out) + "\n"


def cell_rings(mesh):
    """Recover the CCW vertex ring of every cell from the face data."""
    rings = []
    for c in range(mesh.n_cells):
        lo, hi = mesh.cell_ptr[c], mesh.cell_ptr[c + 1]
        ring = []
        for e in range(lo, hi):
            va, vb = mesh.face_vertices[mesh.cf_face[e]]
            # Faces store endpoints in first-encounter order; orient along
            # the CCW ring using the outward normal.
            t = mesh.vertices[vb] - mesh.vertices[va]
            if t[0] * mesh.cf_normal[e, 1] - t[1] * mesh.cf_normal[e, 0] < 0:
                va, vb = vb, va
            ring.append(int(va))
        rings.append(ring)
    return rings


# ---------------------------------------------------------------------------
# Boundary tagging
# ---------------------------------------------------------------------------

def box_predicate(spec):
    """Axis-aligned box/half-plane membership with 1e-12 tolerance.

    spec is a dict with optional keys xmin, xmax, ymin, ymax; omitted bounds
    are unconstrained, so {} matches everything and {'xmax': 0.0} is the
    half-plane x <= 0.
    """
    unknown = set(spec) - {"xmin", "xmax", "ymin", "ymax"}
    if unknown:
        raise MeshError(f"unknown box predicate keys: {sorted(unknown)}")
    tol = 1e-12

    def pred(x, y):
        ok = True
        if "xmin" in spec:
            ok = ok and x >= spec["xmin"] - tol
        if "xmax" in spec:
            ok = ok and x <= spec["xmax"] + tol
        if "ymin" in spec:
            ok = ok and y >= spec["ymin"] - tol
        if "ymax" in spec:
            ok = ok and y <= spec["ymax"] + tol
        return ok

    return pred


def tag_boundary(mesh, dirichlet_predicates):
    """Tag boundary faces as Dirichlet or Neumann.

    dirichlet_predicates is a list of callables (x, y) -> bool or box dicts
    (see box_predicate).  A boundary face is Dirichlet when its barycenter and
    both endpoints all satisfy some predicate, Neumann when its barycenter
    satisfies none; a face whose barycenter matches but whose endpoints do not
    straddles the requested partition, which is an error.  An empty list tags
    the whole boundary Neumann.
    """
    preds = [box_predicate(p) if isinstance(p, dict) else p
             for p in dirichlet_predicates]

    def in_union(x, y):
        return any(p(x, y) for p in preds)

    for fid in mesh.boundary_faces:
        va, vb = mesh.face_vertices[fid]
        pts = [mesh.face_centers[fid], mesh.vertices[va], mesh.vertices[vb]]
        hits = [in_union(px, py) for px, py in pts]
        if all(hits):
            mesh.face_tag[fid] = TAG_DIRICHLET
        elif not hits[0]:
            mesh.face_tag[fid] = TAG_NEUMANN
        else:
            raise MeshError(
                f"boundary face {int(fid)} straddles the Dirichlet/Neumann "
                f"partition (barycenter {pts[0][0]:.6g},{pts[0][1]:.6g})")
    return mesh
