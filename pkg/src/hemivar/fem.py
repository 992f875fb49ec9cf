"""P1 meshes in one and two dimensions: generators, JSON I/O and assembly.

Strains are stored per element in Mandel form so that the Frobenius inner
product of symmetric tensors is the Euclidean dot product:

* d = 1: (u',)
* d = 2: (eps_11, eps_22, sqrt(2) eps_12)

Mesh JSON schema (``schema == "hemivar-mesh"``, ``version == 1``)::

    {
      "schema": "hemivar-mesh", "version": 1, "dim": 2,
      "nodes": [[x, y], ...],
      "elements": [[i, j, k], ...],
      "boundary": {"clamped": [[i, j], ...], "traction": [...], "contact": [...]}
    }

In one dimension nodes are ``[x]``, elements ``[i, j]`` and boundary faces
single-node lists ``[i]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import EmptyClampedBoundary, NonconformingMesh, ValidationError

MESH_SCHEMA = "hemivar-mesh"
MESH_VERSION = 1
BOUNDARY_TAGS = ("clamped", "traction", "contact")


@dataclass(frozen=True)
class Mesh:
    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    clamped: np.ndarray
    traction: np.ndarray
    contact: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def to_json(self) -> dict:
        return {
            "schema": MESH_SCHEMA,
            "version": MESH_VERSION,
            "dim": self.dim,
            "nodes": self.nodes.tolist(),
            "elements": self.elements.tolist(),
            "boundary": {tag: getattr(self, tag).tolist() for tag in BOUNDARY_TAGS},
        }


def _faces(arr, dim):
    a = np.asarray(arr, dtype=int)
    return a.reshape(-1, dim) if a.size else np.zeros((0, dim), dtype=int)


def mesh_from_json(data) -> Mesh:
    """Parse a mesh from a dict, a JSON string or a path."""
    if isinstance(data, (str, Path)) and Path(data).exists():
        data = json.loads(Path(data).read_text())
    elif isinstance(data, str):
        data = json.loads(data)
    unknown = set(data) - {"schema", "version", "dim", "nodes", "elements", "boundary"}
    if unknown:
        raise ValidationError(f"unknown mesh fields: {sorted(unknown)}")
    if data.get("schema") != MESH_SCHEMA or data.get("version") != MESH_VERSION:
        raise ValidationError(f"expected schema {MESH_SCHEMA!r} version {MESH_VERSION}")
    dim = int(data["dim"])
    if dim not in (1, 2):
        raise ValidationError("only dim 1 and 2 are supported")
    boundary = data.get("boundary", {})
    bad_tags = set(boundary) - set(BOUNDARY_TAGS)
    if bad_tags:
        raise ValidationError(f"unknown boundary tags: {sorted(bad_tags)}")
    nodes = np.asarray(data["nodes"], dtype=float).reshape(-1, dim)
    elements = np.asarray(data["elements"], dtype=int).reshape(-1, dim + 1)
    return Mesh(
        dim,
        nodes,
        elements,
        *(_faces(boundary.get(tag, []), dim) for tag in BOUNDARY_TAGS),
    )


def rod_mesh(n: int, length: float = 1.0) -> Mesh:
    """Rod [0, length] with n elements, clamped at 0 and in contact at the far end."""
    if n < 1:
        raise ValidationError("rod needs at least one element")
    x = np.linspace(0.0, length, n + 1)[:, None]
    el = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1)
    return Mesh(1, x, el, np.array([[0]]), np.zeros((0, 1), dtype=int), np.array([[n]]))


def square_mesh(n: int) -> Mesh:
    """Unit square, n x n quads split into triangles.

    Left edge clamped, bottom edge in contact, top and right edges loaded.
    """
    if n < 1:
        raise ValidationError("square needs n >= 1")
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(g, g, indexing="xy")
    nodes = np.stack([X.ravel(), Y.ravel()], axis=1)
    idx = lambda i, j: j * (n + 1) + i  # noqa: E731
    tris = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            tris += [[a, b, c], [a, c, d]]
    bottom = [[idx(i, 0), idx(i + 1, 0)] for i in range(n)]
    left = [[idx(0, j), idx(0, j + 1)] for j in range(n)]
    right = [[idx(n, j), idx(n, j + 1)] for j in range(n)]
    top = [[idx(i, n), idx(i + 1, n)] for i in range(n)]
    return Mesh(2, nodes, np.array(tris), np.array(left), np.array(right + top), np.array(bottom))


def builtin_mesh(name: str) -> Mesh:
    """``rod-N`` or ``square-N``."""
    kind, _, num = name.partition("-")
    if not num.isdigit():
        raise ValidationError(f"unknown built-in mesh {name!r}; use rod-N or square-N")
    if kind == "rod":
        return rod_mesh(int(num))
    if kind == "square":
        return square_mesh(int(num))
    raise ValidationError(f"unknown built-in mesh {name!r}; use rod-N or square-N")


# --- geometry and checks -------------------------------------------------


def element_geometry(mesh: Mesh):
    """Basis gradients (n_el, d+1, d) and element measures (n_el,)."""
    xe = mesh.nodes[mesh.elements]
    if mesh.dim == 1:
        h = xe[:, 1, 0] - xe[:, 0, 0]
        grads = np.stack([-1.0 / h, 1.0 / h], axis=1)[:, :, None]
        return grads, np.abs(h)
    ones = np.ones((mesh.n_elements, 3, 1))
    mats = np.concatenate([ones, xe], axis=2)  # rows [1, x, y]
    det = np.linalg.det(mats)
    if np.any(np.abs(det) < 1e-14):
        raise NonconformingMesh("degenerate triangle")
    inv = np.linalg.inv(mats)  # columns are the barycentric coefficients
    grads = np.transpose(inv[:, 1:, :], (0, 2, 1))
    return grads, 0.5 * np.abs(det)


def _face_owners(mesh: Mesh) -> dict:
    owners: dict = {}
    if mesh.dim == 1:
        for e, (a, b) in enumerate(mesh.elements):
            owners.setdefault((a,), []).append(e)
            owners.setdefault((b,), []).append(e)
        return owners
    for e, tri in enumerate(mesh.elements):
        for k in range(3):
            key = tuple(sorted((tri[k], tri[(k + 1) % 3])))
            owners.setdefault(key, []).append(e)
    return owners


def check_mesh(mesh: Mesh) -> None:
    """Raise NonconformingMesh or EmptyClampedBoundary for invalid meshes."""
    if mesh.n_elements == 0:
        raise NonconformingMesh("mesh has no elements")
    if mesh.elements.min() < 0 or mesh.elements.max() >= mesh.n_nodes:
        raise NonconformingMesh("element refers to a missing node")
    for tag in BOUNDARY_TAGS:
        faces = getattr(mesh, tag)
        if faces.size and (faces.min() < 0 or faces.max() >= mesh.n_nodes):
            raise NonconformingMesh(f"{tag} face refers to a missing node")
    element_geometry(mesh)
    if mesh.dim == 1:
        h = np.diff(mesh.nodes[mesh.elements][:, :, 0], axis=1)
        if np.any(h == 0):
            raise NonconformingMesh("zero-length element")
    owners = _face_owners(mesh)
    if any(len(v) > 2 for v in owners.values()):
        raise NonconformingMesh("face shared by more than two elements")
    boundary = {k for k, v in owners.items() if len(v) == 1}
    if mesh.dim == 2:
        used = np.unique(mesh.elements)
        for a, b in boundary:
            pa, pb = mesh.nodes[a], mesh.nodes[b]
            t = pb - pa
            for c in used:
                if c in (a, b):
                    continue
                w = mesh.nodes[c] - pa
                s = float(w @ t) / float(t @ t)
                if 1e-12 < s < 1 - 1e-12 and abs(t[0] * w[1] - t[1] * w[0]) < 1e-12 * float(t @ t):
                    raise NonconformingMesh(f"hanging node {c} on edge ({a}, {b})")
    seen = set()
    for tag in BOUNDARY_TAGS:
        for face in getattr(mesh, tag):
            key = tuple(sorted(int(i) for i in face))
            if key not in boundary:
                raise NonconformingMesh(f"{tag} face {key} is not a boundary face")
            if key in seen:
                raise NonconformingMesh(f"face {key} carries two boundary tags")
            seen.add(key)
    if face_measures(mesh, mesh.clamped).sum() <= 0:
        raise EmptyClampedBoundary("clamped boundary has zero measure")


def face_measures(mesh: Mesh, faces: np.ndarray) -> np.ndarray:
    if mesh.dim == 1:
        return np.ones(len(faces))
    if not len(faces):
        return np.zeros(0)
    p = mesh.nodes[faces]
    return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)


def contact_nodes(mesh: Mesh):
    """Nodes of the contact boundary with lumped weights and outward normals."""
    faces = mesh.contact
    nodes = np.unique(faces) if faces.size else np.zeros(0, dtype=int)
    pos = {int(n): i for i, n in enumerate(nodes)}
    weights = np.zeros(len(nodes))
    normals = np.zeros((len(nodes), mesh.dim))
    owners = _face_owners(mesh)
    lengths = face_measures(mesh, faces)
    for face, length in zip(faces, lengths):
        key = tuple(sorted(int(i) for i in face))
        el = mesh.elements[owners[key][0]]
        centroid = mesh.nodes[el].mean(axis=0)
        if mesh.dim == 1:
            n = np.sign(mesh.nodes[face[0]] - centroid)
        else:
            t = mesh.nodes[face[1]] - mesh.nodes[face[0]]
            n = np.array([t[1], -t[0]]) / np.linalg.norm(t)
            if n @ (mesh.nodes[face[0]] - centroid) < 0:
                n = -n
        share = length / len(face)
        for node in face:
            weights[pos[int(node)]] += share
            normals[pos[int(node)]] += share * n
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return nodes, weights, normals


# --- assembly ------------------------------------------------------------


def strain_operator(mesh: Mesh, grads: np.ndarray) -> sp.csr_matrix:
    """Sparse map from nodal displacements (node-major) to stacked Mandel strains."""
    d = mesh.dim
    ne = mesh.n_elements
    rows, cols, vals = [], [], []
    if d == 1:
        for a in range(2):
            rows.append(np.arange(ne))
            cols.append(mesh.elements[:, a])
            vals.append(grads[:, a, 0])
    else:
        r2 = 1.0 / np.sqrt(2.0)
        base = 3 * np.arange(ne)
        for a in range(3):
            gx, gy = grads[:, a, 0], grads[:, a, 1]
            dx, dy = 2 * mesh.elements[:, a], 2 * mesh.elements[:, a] + 1
            rows += [base, base + 1, base + 2, base + 2]
            cols += [dx, dy, dx, dy]
            vals += [gx, gy, r2 * gy, r2 * gx]
    nm = 1 if d == 1 else 3
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ne * nm, mesh.n_nodes * d),
    )


def mass_matrix(mesh: Mesh, measures: np.ndarray) -> sp.csr_matrix:
    """Consistent P1 mass matrix for vector fields (node-major dofs)."""
    d = mesh.dim
    k = d + 1
    local = (np.ones((k, k)) + np.eye(k)) / ((k) * (k + 1))
    rows, cols, vals = [], [], []
    for a in range(k):
        for b in range(k):
            for c in range(d):
                rows.append(d * mesh.elements[:, a] + c)
                cols.append(d * mesh.elements[:, b] + c)
                vals.append(measures * local[a, b])
    n = mesh.n_nodes * d
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def mandel_stiffness(dim: int, young: float = None, lame_mu: float = None, lame_lambda: float = None) -> np.ndarray:
    """Isotropic Hooke law as a symmetric matrix acting on Mandel strains."""
    if dim == 1:
        if young is None or young <= 0:
            raise ValidationError("1-D material needs a positive Young modulus")
        return np.array([[float(young)]])
    if lame_mu is None or lame_lambda is None or lame_mu <= 0 or lame_lambda < 0:
        raise ValidationError("2-D material needs lame_mu > 0 and lame_lambda >= 0")
    m, l = float(lame_mu), float(lame_lambda)
    return np.array([[2 * m + l, l, 0.0], [l, 2 * m + l, 0.0], [0.0, 0.0, 2 * m]])
