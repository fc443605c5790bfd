"""Tetrahedral meshes with exact rational coordinates.

Edges and faces are stored as ascending global vertex tuples, which fixes
their orientation: edge tangents run from the lower to the higher vertex
index and face frames are built from the sorted vertex triple, so both
neighbours of a shared entity see the very same frame.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import DegenerateGeometryError, MeshError
from .poly import GeomCache, cross

LOCAL_EDGES = tuple(itertools.combinations(range(4), 2))


def _sub(a, b):
    return tuple(x - y for x, y in zip(a, b))


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


@dataclass(frozen=True)
class EdgeFrame:
    """Unnormalised orthogonal frame (tangent, n, m) of a global edge."""

    vertices: tuple
    tangent: tuple
    n: tuple
    m: tuple

    @classmethod
    def build(cls, a, b, xa, xb):
        t = _sub(xb, xa)
        tt = _dot(t, t)
        j = min(range(3), key=lambda c: (abs(t[c]), c))
        e = tuple(Fraction(int(c == j)) for c in range(3))
        n = tuple(ec - (t[j] / tt) * tc for ec, tc in zip(e, t))  # Gram-Schmidt of e_j against t
        m = cross(t, n)
        return cls((a, b), t, n, m)


@dataclass(frozen=True)
class FaceFrame:
    """Normal and in-plane tangents of a global face, from its sorted vertices."""

    vertices: tuple
    normal: tuple
    tau1: tuple
    tau2: tuple

    @classmethod
    def build(cls, verts, coords):
        xa, xb, xc = coords
        tau1 = _sub(xb, xa)
        normal = cross(tau1, _sub(xc, xa))
        tau2 = cross(normal, tau1)
        return cls(tuple(verts), normal, tau1, tau2)


@dataclass
class TetMesh:
    vertices: tuple
    tets: tuple
    edges: tuple = field(init=False)
    faces: tuple = field(init=False)
    tet_edges: tuple = field(init=False)
    tet_faces: tuple = field(init=False)
    face_tets: dict = field(init=False)
    geoms: tuple = field(init=False)
    edge_frames: dict = field(init=False)
    face_frames: dict = field(init=False)
    name: str = "mesh"

    def __post_init__(self):
        self.vertices = tuple(tuple(Fraction(c) for c in v) for v in self.vertices)
        self.tets = tuple(tuple(int(i) for i in t) for t in self.tets)
        nv = len(self.vertices)
        for ti, t in enumerate(self.tets):
            if len(t) != 4 or len(set(t)) != 4:
                raise MeshError(f"tet {ti} must have four distinct vertices")
            for i in t:
                if not 0 <= i < nv:
                    raise MeshError(f"tet {ti} references vertex {i} of {nv}")
        geoms = []
        for ti, t in enumerate(self.tets):
            try:
                geoms.append(GeomCache.from_vertices([self.vertices[i] for i in t]))
            except DegenerateGeometryError as exc:
                raise DegenerateGeometryError(f"tet {ti} {t} is degenerate (zero volume)") from exc
        self.geoms = tuple(geoms)
        edges, faces = set(), {}
        tet_edges, tet_faces = [], []
        for ti, t in enumerate(self.tets):
            te = tuple(tuple(sorted((t[i], t[j]))) for i, j in LOCAL_EDGES)
            tf = tuple(tuple(sorted(t[j] for j in range(4) if j != i)) for i in range(4))
            edges.update(te)
            for f in tf:
                faces.setdefault(f, []).append(ti)
            tet_edges.append(te)
            tet_faces.append(tf)
        for f, ts in faces.items():
            if len(ts) > 2:
                raise MeshError(f"face {f} is shared by {len(ts)} tets (non-conforming)")
        self.edges = tuple(sorted(edges))
        self.faces = tuple(sorted(faces))
        self.tet_edges = tuple(tet_edges)
        self.tet_faces = tuple(tet_faces)
        self.face_tets = {f: tuple(ts) for f, ts in faces.items()}
        self.edge_frames = {e: EdgeFrame.build(*e, self.vertices[e[0]], self.vertices[e[1]]) for e in self.edges}
        self.face_frames = {f: FaceFrame.build(f, [self.vertices[i] for i in f]) for f in self.faces}

    @property
    def counts(self):
        return {"V": len(self.vertices), "E": len(self.edges), "F": len(self.faces), "T": len(self.tets)}

    @property
    def euler(self):
        c = self.counts
        return c["V"] - c["E"] + c["F"] - c["T"]

    def boundary_faces(self):
        return [f for f in self.faces if len(self.face_tets[f]) == 1]

    def interior_faces(self):
        return [f for f in self.faces if len(self.face_tets[f]) == 2]

    def h(self):
        """Largest edge length (float)."""
        return max(float(_dot(_sub(self.vertices[a], self.vertices[b]), _sub(self.vertices[a], self.vertices[b]))) ** 0.5
                   for a, b in self.edges)

    def info(self):
        c = self.counts
        return {**c, "euler": self.euler, "boundary_faces": len(self.boundary_faces()), "name": self.name}


def build_mesh(vertices, tets, name="mesh"):
    return TetMesh(vertices, tets, name=name)


# ---------------------------------------------------------------------------
# generators

REFERENCE_VERTICES = ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1))


def kuhn_tets(corner_index):
    """Six Kuhn tets of a cube; ``corner_index(bits)`` gives the global vertex of a corner."""
    out = []
    for perm in itertools.permutations(range(3)):
        bits = [0, 0, 0]
        path = [corner_index(tuple(bits))]
        for axis in perm:
            bits[axis] = 1
            path.append(corner_index(tuple(bits)))
        out.append(tuple(path))
    return out


def cube_mesh(n=1):
    """Unit cube split into n^3 subcubes, each cut into six Kuhn tets."""
    if n < 1:
        raise MeshError("refinement level must be >= 1")

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    verts = [(Fraction(i, n), Fraction(j, n), Fraction(k, n)) for i in range(n + 1) for j in range(n + 1) for k in range(n + 1)]
    tets = []
    for i, j, k in itertools.product(range(n), repeat=3):
        tets.extend(kuhn_tets(lambda b, i=i, j=j, k=k: vid(i + b[0], j + b[1], k + b[2])))
    return verts, tets


def generate_mesh(kind):
    """``single_tet``, ``two_tet``, ``cube6`` or ``cube6_refined(n)`` with n <= 3."""
    kind = kind.strip()
    if kind == "single_tet":
        return build_mesh(REFERENCE_VERTICES, [(0, 1, 2, 3)], kind)
    if kind == "two_tet":
        verts = REFERENCE_VERTICES + ((1, 1, 1),)
        return build_mesh(verts, [(0, 1, 2, 3), (1, 2, 3, 4)], kind)
    if kind == "cube6":
        return build_mesh(*cube_mesh(1), kind)
    if kind.startswith("cube6_refined"):
        inner = kind[len("cube6_refined"):].strip()
        if not (inner.startswith("(") and inner.endswith(")")):
            raise MeshError(f"unsupported mesh kind {kind!r}")
        try:
            n = int(inner[1:-1])
        except ValueError as exc:
            raise MeshError(f"bad refinement level in {kind!r}") from exc
        if not 1 <= n <= 3:
            raise MeshError("refinement level must be in 1..3")
        return build_mesh(*cube_mesh(n), f"cube6_refined({n})")
    raise MeshError(f"unsupported mesh kind {kind!r}")


SHIPPED_MESHES = ("single_tet", "two_tet", "cube6", "cube6_refined(2)")


# ---------------------------------------------------------------------------
# file IO


def format_rational(x):
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def write_mesh(mesh, path):
    lines = ["ggmesh 1", f"# {mesh.name}", f"vertices {len(mesh.vertices)}"]
    lines += [" ".join(format_rational(c) for c in v) for v in mesh.vertices]
    lines.append(f"tets {len(mesh.tets)}")
    lines += [" ".join(str(i) for i in t) for t in mesh.tets]
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_rational(tok, line, fieldname):
    try:
        return Fraction(tok)
    except (ValueError, ZeroDivisionError) as exc:
        raise MeshError(f"cannot parse rational {tok!r}", line, fieldname) from exc


def parse_mesh(text, name="mesh"):
    lines = [(i + 1, ln.split("#", 1)[0].strip()) for i, ln in enumerate(text.splitlines())]
    lines = [(no, ln) for no, ln in lines if ln]
    it = iter(lines)

    def expect(keyword):
        try:
            no, ln = next(it)
        except StopIteration:
            raise MeshError(f"unexpected end of file, expected {keyword!r}") from None
        parts = ln.split()
        if parts[0] != keyword or len(parts) != 2:
            raise MeshError(f"expected '{keyword} <count>'", no, keyword)
        try:
            count = int(parts[1])
        except ValueError:
            raise MeshError(f"bad count {parts[1]!r}", no, keyword) from None
        if count < 0:
            raise MeshError("negative count", no, keyword)
        return count

    try:
        no, header = next(it)
    except StopIteration:
        raise MeshError("empty mesh file") from None
    if header.split() != ["ggmesh", "1"]:
        raise MeshError("missing header 'ggmesh 1'", no, "header")
    nv = expect("vertices")
    verts = []
    for k in range(nv):
        try:
            no, ln = next(it)
        except StopIteration:
            raise MeshError(f"expected {nv} vertices, found {k}") from None
        parts = ln.split()
        if len(parts) != 3:
            raise MeshError(f"vertex line needs 3 coordinates, got {len(parts)}", no, "vertex")
        verts.append(tuple(_parse_rational(p, no, "xyz"[c]) for c, p in enumerate(parts)))
    nt = expect("tets")
    tets = []
    for k in range(nt):
        try:
            no, ln = next(it)
        except StopIteration:
            raise MeshError(f"expected {nt} tets, found {k}") from None
        parts = ln.split()
        if len(parts) != 4:
            raise MeshError(f"tet line needs 4 indices, got {len(parts)}", no, "tet")
        idx = []
        for c, p in enumerate(parts):
            try:
                i = int(p)
            except ValueError:
                raise MeshError(f"bad vertex index {p!r}", no, f"index{c}") from None
            if not 0 <= i < nv:
                raise MeshError(f"tet {k} references vertex {i}, index out of range (have {nv} vertices)", no, f"index{c}")
            idx.append(i)
        tets.append(tuple(idx))
    extra = next(it, None)
    if extra is not None:
        raise MeshError("trailing content after tets", extra[0])
    return build_mesh(verts, tets, name)


def read_mesh(path):
    p = Path(path)
    if not p.exists():
        raise MeshError(f"mesh file not found: {path}")
    return parse_mesh(p.read_text(), p.stem)


def mesh_io(path, direction, mesh=None):
    if direction == "read":
        return read_mesh(path)
    if direction == "write":
        write_mesh(mesh, path)
        return mesh
    raise ValueError("direction must be 'read' or 'write'")


def load_mesh(source):
    """Generator name or path to a mesh file."""
    try:
        return generate_mesh(source)
    except MeshError:
        if Path(source).suffix or "/" in source or Path(source).exists():
            return read_mesh(source)
        raise
