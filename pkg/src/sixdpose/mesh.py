"""Triangle meshes: OBJ / ASCII-PLY loading and the model diameter.

Vertices are in millimeters in the model frame. Quads are triangulated as
fans; faces with more than four vertices are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MeshParseError(ValueError):
    """Malformed mesh file; carries the offending line number."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


@dataclass(frozen=True)
class TriMesh:
    """Vertices (n, 3) in mm, triangle faces (m, 3) ints, derived diameter."""

    vertices: np.ndarray
    faces: np.ndarray
    diameter: float

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 4:
            raise ValueError(f"need at least 4 vertices of dim 3, got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3 or f.shape[0] < 1:
            raise ValueError(f"need at least 1 triangle face, got {f.shape}")
        if f.min() < 0 or f.max() >= v.shape[0]:
            raise ValueError(f"face index out of range [0, {v.shape[0]})")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @staticmethod
    def from_arrays(vertices, faces) -> "TriMesh":
        v = np.asarray(vertices, dtype=np.float64)
        return TriMesh(v, np.asarray(faces, dtype=np.int64), mesh_diameter_of(v))


def mesh_diameter_of(vertices: np.ndarray) -> float:
    """Max pairwise vertex distance, O(n^2) in blocks.

    The arithmetic per pair matches a plain two-loop scan (squared
    differences summed over the last axis), so the result is bit-identical
    to a brute-force oracle.
    """
    v = np.asarray(vertices, dtype=np.float64)
    if v.shape[0] < 2:
        raise ValueError("diameter needs at least 2 vertices")
    best = 0.0
    block = 512
    for i in range(0, v.shape[0], block):
        d = v[i : i + block, None, :] - v[None, :, :]
        sq = (d * d).sum(axis=-1)
        best = max(best, float(sq.max()))
    return float(np.sqrt(best))


def mesh_diameter(mesh: TriMesh) -> float:
    return mesh_diameter_of(mesh.vertices)


def _triangulate(idx: list[int], path, line_no: int) -> list[tuple[int, int, int]]:
    if len(idx) == 3:
        return [(idx[0], idx[1], idx[2])]
    if len(idx) == 4:
        return [(idx[0], idx[1], idx[2]), (idx[0], idx[2], idx[3])]
    raise MeshParseError(path, line_no, f"faces with {len(idx)} vertices are not supported")


def _load_obj(path: Path) -> TriMesh:
    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshParseError(path, line_no, "vertex line needs 3 coordinates")
                try:
                    vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError:
                    raise MeshParseError(path, line_no, f"bad vertex coordinate in {line!r}")
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise MeshParseError(path, line_no, f"bad face index {tok!r}")
                    if i < 0:
                        i = len(vertices) + 1 + i
                    if i < 1 or i > len(vertices):
                        raise MeshParseError(
                            path, line_no, f"face index {i} out of range of {len(vertices)} vertices"
                        )
                    idx.append(i - 1)
                faces.extend(_triangulate(idx, path, line_no))
    if len(vertices) < 4 or not faces:
        raise MeshParseError(path, 0, "mesh needs at least 4 vertices and 1 face")
    return TriMesh.from_arrays(vertices, faces)


def _load_ply(path: Path) -> TriMesh:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshParseError(path, 1, "not a PLY file")
    n_vertex = n_face = None
    vertex_props: list[str] = []
    in_vertex_element = False
    body_start = None
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise MeshParseError(path, i, "only ascii PLY is supported")
        elif parts[0] == "element":
            in_vertex_element = parts[1] == "vertex"
            if parts[1] == "vertex":
                n_vertex = int(parts[2])
            elif parts[1] == "face":
                n_face = int(parts[2])
        elif parts[0] == "property" and in_vertex_element:
            vertex_props.append(parts[-1])
        elif parts[0] == "end_header":
            body_start = i
            break
    if body_start is None or n_vertex is None or n_face is None:
        raise MeshParseError(path, len(lines), "incomplete PLY header")
    try:
        ix, iy, iz = (vertex_props.index(k) for k in ("x", "y", "z"))
    except ValueError:
        raise MeshParseError(path, body_start, "vertex element must have x, y, z properties")

    vertices = []
    faces: list[tuple[int, int, int]] = []
    cursor = body_start
    for _ in range(n_vertex):
        if cursor >= len(lines):
            raise MeshParseError(path, cursor + 1, "unexpected end of vertex data")
        parts = lines[cursor].split()
        cursor += 1
        if len(parts) < len(vertex_props):
            raise MeshParseError(path, cursor, "short vertex line")
        try:
            vertices.append([float(parts[ix]), float(parts[iy]), float(parts[iz])])
        except ValueError:
            raise MeshParseError(path, cursor, "bad vertex coordinate")
    for _ in range(n_face):
        if cursor >= len(lines):
            raise MeshParseError(path, cursor + 1, "unexpected end of face data")
        parts = lines[cursor].split()
        cursor += 1
        try:
            count = int(parts[0])
            idx = [int(p) for p in parts[1 : 1 + count]]
        except (ValueError, IndexError):
            raise MeshParseError(path, cursor, "bad face line")
        for i in idx:
            if i < 0 or i >= len(vertices):
                raise MeshParseError(path, cursor, f"face index {i} out of range")
        faces.extend(_triangulate(idx, path, cursor))
    if len(vertices) < 4 or not faces:
        raise MeshParseError(path, cursor, "mesh needs at least 4 vertices and 1 face")
    return TriMesh.from_arrays(vertices, faces)


def load_mesh(path) -> TriMesh:
    """Load an OBJ or ASCII-PLY mesh, preserving vertex order."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(p))
    suffix = p.suffix.lower()
    if suffix == ".obj":
        return _load_obj(p)
    if suffix == ".ply":
        return _load_ply(p)
    raise ValueError(f"unsupported mesh format {suffix!r} (want .obj or .ply)")


def make_box(sx: float, sy: float, sz: float, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned box mesh, 8 vertices / 12 triangles."""
    cx, cy, cz = center
    hx, hy, hz = sx / 2.0, sy / 2.0, sz / 2.0
    verts = np.array(
        [
            [cx - hx, cy - hy, cz - hz],
            [cx + hx, cy - hy, cz - hz],
            [cx + hx, cy + hy, cz - hz],
            [cx - hx, cy + hy, cz - hz],
            [cx - hx, cy - hy, cz + hz],
            [cx + hx, cy - hy, cz + hz],
            [cx + hx, cy + hy, cz + hz],
            [cx - hx, cy + hy, cz + hz],
        ]
    )
    faces = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom (z-)
            [4, 5, 6], [4, 6, 7],  # top (z+)
            [0, 1, 5], [0, 5, 4],  # y-
            [2, 3, 7], [2, 7, 6],  # y+
            [1, 2, 6], [1, 6, 5],  # x+
            [3, 0, 4], [3, 4, 7],  # x-
        ]
    )
    return TriMesh.from_arrays(verts, faces)


def make_cube(side: float) -> TriMesh:
    return make_box(side, side, side)


def make_cylinder(radius: float, height: float, segments: int = 32) -> TriMesh:
    """Closed cylinder about the z axis; rim vertices count 2*segments (+2 caps)."""
    angles = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)
    bottom = np.concatenate([ring, np.full((segments, 1), -height / 2.0)], axis=1)
    top = np.concatenate([ring, np.full((segments, 1), height / 2.0)], axis=1)
    verts = np.concatenate([bottom, top, [[0, 0, -height / 2.0]], [[0, 0, height / 2.0]]])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces.append([i, j, segments + i])
        faces.append([j, segments + j, segments + i])
        faces.append([cb, j, i])
        faces.append([ct, segments + i, segments + j])
    return TriMesh.from_arrays(verts, np.array(faces))


def make_lshape(size: float = 100.0) -> TriMesh:
    """Asymmetric L-shaped prism; useful where view ambiguity must be avoided."""
    s = size
    # L footprint in xy, extruded along z with a thickness gradient broken
    # by unequal arms so that no two views look alike.
    base = np.array(
        [
            [0.0, 0.0], [s, 0.0], [s, 0.35 * s], [0.45 * s, 0.35 * s],
            [0.45 * s, s], [0.0, s],
        ]
    )
    lo, hi = -0.25 * s, 0.25 * s
    bottom = np.concatenate([base, np.full((6, 1), lo)], axis=1)
    top = np.concatenate([base, np.full((6, 1), hi)], axis=1)
    top[1, 2] = 0.45 * s  # raised corner breaks the up/down symmetry
    verts = np.concatenate([bottom, top]) - np.array([0.4 * s, 0.4 * s, 0.0])
    # footprint is CCW in xy: reversed fans face -z (bottom), CCW fans +z (top)
    polys = [
        [3, 2, 1, 0], [5, 4, 3, 0],  # bottom, outward -z
        [6, 7, 8, 9], [6, 9, 10, 11],  # top, outward +z
    ]
    for i in range(6):
        j = (i + 1) % 6
        polys.append([i, j, 6 + j, 6 + i])
    faces = []
    for p in polys:
        if len(p) == 3:
            faces.append(p)
        else:
            faces.append([p[0], p[1], p[2]])
            faces.append([p[0], p[2], p[3]])
    return TriMesh.from_arrays(verts, np.array(faces))


def make_stepblock(size: float = 100.0) -> TriMesh:
    """Chunky asymmetric two-box step; every viewing direction looks distinct.

    Interpenetrating boxes are fine for z-buffer rendering, silhouettes,
    diameters and point metrics; no boolean union is needed.
    """
    s = size
    base = make_box(s, 0.8 * s, 0.5 * s)
    top = make_box(0.45 * s, 0.35 * s, 0.5 * s, center=(-0.2 * s, -0.15 * s, 0.45 * s))
    verts = np.concatenate([base.vertices, top.vertices])
    faces = np.concatenate([base.faces, top.faces + len(base.vertices)])
    return TriMesh.from_arrays(verts, faces)


def save_obj(mesh: TriMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
