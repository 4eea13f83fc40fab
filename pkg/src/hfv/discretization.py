"""Hybrid discrete unknowns, gradient reconstruction and local matrices.

A hybrid vector carries one value per cell and one value per face.  On every
cell K the discrete gradient is piecewise constant on the pyramids P_{K,sigma}:

    grad_{K,sigma} v = G_K v + (eta / d_{K,sigma})
                       (v_sigma - v_K - G_K v . (xbar_sigma - x_K)) n_{K,sigma}

with the Green formula cell gradient G_K v = (1/|K|) sum |sigma| v_sigma
n_{K,sigma}.  The local diffusion matrix acts on the differences
delta_sigma = v_K - v_sigma:

    sum_sigma |P_{K,sigma}| grad_{K,sigma} v . Lambda_{K,sigma} grad_{K,sigma} u
        = delta v . A_K delta u,      A_K = N_K^T W_K N_K  (SPD),

and the numerical diffusion fluxes F_{K,sigma}(u) = (A_K delta u)_sigma
satisfy sum_sigma F_{K,sigma}(u) (v_K - v_sigma) = delta v . A_K delta u.
B_K denotes the diagonal matrix of absolute row sums of A_K.

Everything is vectorized over the mesh's cell groups (cells with equal face
count), one batched einsum per group.
"""

from __future__ import annotations

import numpy as np

DEFAULT_ETA = 1.5  # stabilization between sqrt(2) (hybrid FV) and 2 (DGA)


class DofVector:
    """A hybrid unknown: values on cells and on faces."""

    __slots__ = ("cells", "faces")

    def __init__(self, cells, faces):
        self.cells = np.asarray(cells, dtype=float)
        self.faces = np.asarray(faces, dtype=float)

    @classmethod
    def zeros(cls, mesh):
        return cls(np.zeros(mesh.n_cells), np.zeros(mesh.n_faces))

    @classmethod
    def full(cls, mesh, value):
        return cls(np.full(mesh.n_cells, float(value)),
                   np.full(mesh.n_faces, float(value)))

    def copy(self):
        return DofVector(self.cells.copy(), self.faces.copy())

    def map(self, fn):
        return DofVector(fn(self.cells), fn(self.faces))

    def _combine(self, other, op):
        if isinstance(other, DofVector):
            return DofVector(op(self.cells, other.cells),
                             op(self.faces, other.faces))
        return DofVector(op(self.cells, other), op(self.faces, other))

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __rsub__(self, other):
        return DofVector(other - self.cells, other - self.faces)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._combine(other, np.divide)

    def min(self):
        return min(self.cells.min(), self.faces.min())


def _evaluate(fn, x, y):
    """Evaluate a scalar field, falling back to np.vectorize if needed."""
    if np.isscalar(fn) or isinstance(fn, (int, float)):
        return np.full_like(np.asarray(x, dtype=float), float(fn))
    out = fn(x, y)
    out = np.asarray(out, dtype=float)
    if out.shape != np.shape(x):
        out = np.vectorize(fn)(x, y)
    return np.asarray(out, dtype=float)


def interpolate(fn, mesh):
    """Point-value interpolation: fn at cell centers and face barycenters."""
    cells = _evaluate(fn, mesh.cell_center[:, 0], mesh.cell_center[:, 1])
    faces = _evaluate(fn, mesh.face_centers[:, 0], mesh.face_centers[:, 1])
    return DofVector(cells, faces)


def _subdivided_barycenters(levels=2):
    """Centroids of the 4^levels congruent subtriangles of a triangle."""
    tris = [np.eye(3)]
    for _ in range(levels):
        nxt = []
        for t in tris:
            m01, m12, m20 = (t[0]+t[1])/2, (t[1]+t[2])/2, (t[2]+t[0])/2
            nxt += [np.array([t[0], m01, m20]), np.array([m01, t[1], m12]),
                    np.array([m20, m12, t[2]]), np.array([m01, m12, m20])]
        tris = nxt
    return np.array([t.mean(axis=0) for t in tris])  # (16, 3) barycentric


_TRI_QUAD_BARY = _subdivided_barycenters()


def cell_averages(mesh, fn):
    """Cell averages of fn via the pyramid fan with 16-point subdivision.

    Each pyramid triangle (x_K, a, b) is split into 16 congruent triangles and
    fn is averaged over their centroids (exact for affine fn; the subdivision
    resolves discontinuous data such as indicator functions).
    """
    xk = mesh.cell_center[mesh.cf_cell]                       # (E, 2)
    a = mesh.vertices[mesh.face_vertices[mesh.cf_face, 0]]
    b = mesh.vertices[mesh.face_vertices[mesh.cf_face, 1]]
    corners = np.stack([xk, a, b], axis=1)                    # (E, 3, 2)
    pts = np.einsum("qc,ecd->eqd", _TRI_QUAD_BARY, corners)   # (E, 16, 2)
    vals = _evaluate(fn, pts[..., 0], pts[..., 1])
    pyr_avg = vals.mean(axis=1)                               # (E,)
    tot = np.zeros(mesh.n_cells)
    np.add.at(tot, mesh.cf_cell, mesh.cf_pvol * pyr_avg)
    return tot / mesh.cell_area


def mass(mesh, cells):
    """Discrete mass sum |K| u_K."""
    return float(mesh.cell_area @ np.asarray(cells))


def norm_l2(mesh, cells):
    return float(np.sqrt(mesh.cell_area @ np.asarray(cells) ** 2))


def norm_l1(mesh, cells):
    return float(mesh.cell_area @ np.abs(np.asarray(cells)))


def deltas(mesh, v):
    """Per-(cell, face) differences v_K - v_sigma, aligned with cf rows."""
    return v.cells[mesh.cf_cell] - v.faces[mesh.cf_face]


def seminorm_h1(mesh, v):
    """Discrete H1 seminorm: sqrt(sum |sigma|/d_{K,sigma} (v_K - v_sigma)^2)."""
    d = deltas(mesh, v)
    w = mesh.face_lengths[mesh.cf_face] / mesh.cf_d
    return float(np.sqrt(w @ d ** 2))


class DiffusionTensor:
    """Symmetric 2x2 diffusion tensor field, constant or point-dependent.

    Constructed from a constant (scalar, pair of diagonal entries, or 2x2
    matrix) or a callable (x, y) -> 2x2 array.
    """

    def __init__(self, value):
        if callable(value):
            self._fn = value
            self._const = None
        else:
            arr = np.asarray(value, dtype=float)
            if arr.ndim == 0:
                arr = np.diag([float(arr)] * 2)
            elif arr.shape == (2,):
                arr = np.diag(arr)
            if arr.shape != (2, 2):
                raise ValueError("diffusion tensor must be 2x2")
            if abs(arr[0, 1] - arr[1, 0]) > 1e-14:
                raise ValueError("diffusion tensor must be symmetric")
            self._fn = None
            self._const = arr

    @property
    def is_constant(self):
        return self._const is not None

    def at(self, points):
        """Tensor values at points (N, 2) -> (N, 2, 2)."""
        points = np.asarray(points, dtype=float)
        n = points.shape[0]
        if self._const is not None:
            return np.broadcast_to(self._const, (n, 2, 2)).copy()
        out = np.empty((n, 2, 2))
        for i, (x, y) in enumerate(points):
            out[i] = np.asarray(self._fn(x, y), dtype=float)
        return out

    def eigmin_at(self, points):
        """Smallest eigenvalue at each point (closed form for 2x2)."""
        t = self.at(points)
        a, b, c = t[:, 0, 0], t[:, 0, 1], t[:, 1, 1]
        return (a + c) / 2 - np.sqrt(((a - c) / 2) ** 2 + b ** 2)


def pyramid_barycenters(mesh):
    """Barycenters of the pyramids P_{K,sigma}, aligned with cf rows."""
    xk = mesh.cell_center[mesh.cf_cell]
    a = mesh.vertices[mesh.face_vertices[mesh.cf_face, 0]]
    b = mesh.vertices[mesh.face_vertices[mesh.cf_face, 1]]
    return (xk + a + b) / 3.0


class LocalOps:
    """Grouped local diffusion matrices A_K for a given per-pyramid tensor.

    groups is a list aligned with mesh.groups: (m, cells, rows, A) where
    A has shape (g, m, m), g the number of cells with m faces, and rows are
    the cf-array indices of those cells' (cell, face) pairs.
    """

    def __init__(self, mesh, groups):
        self.mesh = mesh
        self.groups = groups

    def cell_matrix(self, cell):
        """Dense A_K of a single cell (testing / inspection)."""
        for m, cells, rows, A in self.groups:
            pos = np.nonzero(cells == cell)[0]
            if pos.size:
                return A[pos[0]].copy()
        raise KeyError(cell)

    def b_rowsums(self):
        """Diagonal of B_K (absolute row sums of A_K), aligned with cf rows."""
        out = np.empty(self.mesh.n_cf)
        for m, cells, rows, A in self.groups:
            out[rows.ravel()] = np.abs(A).sum(axis=2).ravel()
        return out

    def bilinear(self, u, v):
        """sum_K delta v . A_K delta u over all cells."""
        du, dv = deltas(self.mesh, u), deltas(self.mesh, v)
        total = 0.0
        for m, cells, rows, A in self.groups:
            total += np.einsum("gl,glm,gm->", dv[rows], A, du[rows])
        return float(total)

    def fluxes(self, u):
        """Diffusion fluxes F_{K,sigma}(u) = (A_K delta u)_sigma per cf row."""
        du = deltas(self.mesh, u)
        out = np.empty(self.mesh.n_cf)
        for m, cells, rows, A in self.groups:
            out[rows.ravel()] = np.einsum("glm,gm->gl", A, du[rows]).ravel()
        return out


def build_local_ops(mesh, tensor_cf, eta=DEFAULT_ETA):
    """Assemble the grouped local matrices A_K = N_K^T W_K N_K.

    tensor_cf : (E, 2, 2) tensor value on each pyramid (one-point rule).
    """
    tensor_cf = np.asarray(tensor_cf, dtype=float)
    if tensor_cf.shape != (mesh.n_cf, 2, 2):
        raise ValueError("tensor_cf must have shape (n_cf, 2, 2)")
    groups = []
    for m, cells, rows in mesh.groups:
        lens = mesh.face_lengths[mesh.cf_face[rows]]          # (g, m)
        nrm = mesh.cf_normal[rows]                            # (g, m, 2)
        dks = mesh.cf_d[rows]                                 # (g, m)
        pvol = mesh.cf_pvol[rows]                             # (g, m)
        area = mesh.cell_area[cells]                          # (g,)
        xdiff = (mesh.face_centers[mesh.cf_face[rows]]
                 - mesh.cell_center[cells][:, None, :])       # (g, m, 2)

        # Cell gradient in delta coordinates: G = -(1/|K|) sum |s| delta_s n_s.
        gmat = -(lens[:, :, None] * nrm / area[:, None, None])  # (g, m(col), 2)
        gmat = gmat.transpose(0, 2, 1)                           # (g, 2, m)
        ed = np.einsum("gja,gal->gjl", xdiff, gmat)              # (g, m, m)
        ident = np.eye(m)[None, :, :]
        # N[g, j, a, l]: gradient on pyramid j, component a, from delta_l.
        N = (gmat[:, None, :, :]
             - (float(eta) / dks)[:, :, None, None]
             * nrm[:, :, :, None] * (ident + ed)[:, :, None, :])
        W = pvol[:, :, None, None] * tensor_cf[rows]             # (g, m, 2, 2)
        A = np.einsum("gjal,gjab,gjbn->gln", N, W, N)
        A = 0.5 * (A + A.transpose(0, 2, 1))  # symmetrize roundoff
        groups.append((m, cells, rows, A))
    return LocalOps(mesh, groups)


def pyramid_gradients(mesh, v, eta=DEFAULT_ETA):
    """Discrete gradient of a hybrid vector on every pyramid, (E, 2)."""
    out = np.empty((mesh.n_cf, 2))
    dv = deltas(mesh, v)
    for m, cells, rows in mesh.groups:
        lens = mesh.face_lengths[mesh.cf_face[rows]]
        nrm = mesh.cf_normal[rows]
        dks = mesh.cf_d[rows]
        area = mesh.cell_area[cells]
        xdiff = (mesh.face_centers[mesh.cf_face[rows]]
                 - mesh.cell_center[cells][:, None, :])
        dloc = dv[rows]                                        # (g, m)
        G = -np.einsum("gm,gma->ga", lens * dloc, nrm) / area[:, None]
        corr = (-dloc - np.einsum("gma,ga->gm", xdiff, G)) * eta / dks
        out[rows.ravel()] = (G[:, None, :] + corr[:, :, None] * nrm).reshape(-1, 2)
    return out
