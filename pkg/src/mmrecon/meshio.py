"""Mesh ingestion (OBJ / PLY) and the point-cloud PLY wire format.

Clouds are written as binary little-endian PLY with float32 properties
x, y, z, nx, ny, nz. Clouds without normals store zero normal vectors and
come back with ``normals=None``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import EmptyMeshError, ParseError
from .geometry import OrientedPointCloud, TriangleMesh

VERTEX_DEDUP_DECIMALS = 9  # merge vertices within 1e-9 m
_DEGENERATE_AREA = 1e-18  # m^2


def load_mesh(path) -> TriangleMesh:
    """Load an ASCII OBJ or an ASCII / binary little-endian PLY mesh.

    The mesh is cleaned on ingestion: vertices deduplicated within 1e-9 m,
    zero-area and repeated-index faces dropped.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"no such file: {path}")
    suffix = path.suffix.lower()
    if suffix == ".obj":
        vertices, faces = _parse_obj(path)
    elif suffix == ".ply":
        vertices, faces = _parse_ply_mesh(path)
    else:
        raise ParseError(f"unsupported mesh format: {path.name}")
    return _cleanup(vertices, faces)


def _cleanup(vertices: np.ndarray, faces: np.ndarray) -> TriangleMesh:
    if len(vertices) == 0 or len(faces) == 0:
        raise EmptyMeshError("mesh has no faces")
    if faces.min() < 0 or faces.max() >= len(vertices):
        raise ParseError("face index out of range")

    rounded = np.round(vertices, VERTEX_DEDUP_DECIMALS)
    uniq, remap = np.unique(rounded, axis=0, return_inverse=True)
    faces = remap[faces]

    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    faces = faces[keep]
    if len(faces):
        a, b, c = (uniq[faces[:, i]] for i in range(3))
        area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        faces = faces[area > _DEGENERATE_AREA]
    if len(faces) == 0:
        raise EmptyMeshError("no valid faces after cleanup")

    # drop vertices that no face references
    used = np.zeros(len(uniq), dtype=bool)
    used[faces.ravel()] = True
    new_index = np.cumsum(used) - 1
    return TriangleMesh(vertices=uniq[used], faces=new_index[faces])


def _parse_obj(path: Path) -> tuple[np.ndarray, np.ndarray]:
    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    try:
        text = path.read_text()
    except UnicodeDecodeError as e:
        raise ParseError(f"{path.name}: not an ASCII OBJ ({e})") from e
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ParseError(f"{path.name}:{lineno}: vertex needs 3 coordinates")
            try:
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError as e:
                raise ParseError(f"{path.name}:{lineno}: bad vertex: {e}") from e
        elif tag == "f":
            if len(parts) < 4:
                raise ParseError(f"{path.name}:{lineno}: face needs >= 3 vertices")
            try:
                idx = [_obj_index(tok, len(vertices)) for tok in parts[1:]]
            except ValueError as e:
                raise ParseError(f"{path.name}:{lineno}: bad face: {e}") from e
            for i in range(1, len(idx) - 1):  # fan-triangulate polygons
                faces.append((idx[0], idx[i], idx[i + 1]))
        # vn / vt / usemtl / o / g / s are ignored
    if not vertices:
        raise ParseError(f"{path.name}: no vertices")
    return np.asarray(vertices, dtype=np.float64), np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def _obj_index(token: str, nverts: int) -> int:
    head = token.split("/")[0]
    i = int(head)
    if i < 0:
        i = nverts + i
    else:
        i = i - 1
    if i < 0 or i >= nverts:
        raise ValueError(f"vertex index {token} out of range")
    return i


# ---------------------------------------------------------------------------
# PLY


_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class _PlyHeader:
    def __init__(self):
        self.fmt = None  # "ascii" | "binary_little_endian"
        self.elements: list[tuple[str, int, list]] = []  # (name, count, props)


def _read_ply_header(fh) -> _PlyHeader:
    magic = fh.readline().strip()
    if magic != b"ply":
        raise ParseError("missing 'ply' magic")
    hdr = _PlyHeader()
    props: list = []
    while True:
        raw = fh.readline()
        if not raw:
            raise ParseError("unterminated PLY header")
        line = raw.decode("ascii", errors="replace").strip()
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        parts = line.split()
        if parts[0] == "format":
            if parts[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unsupported PLY format: {parts[1]}")
            hdr.fmt = parts[1]
        elif parts[0] == "element":
            props = []
            hdr.elements.append((parts[1], int(parts[2]), props))
        elif parts[0] == "property":
            if parts[1] == "list":
                props.append(("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]], parts[4]))
            else:
                props.append(("scalar", _PLY_TYPES[parts[1]], parts[2]))
        elif parts[0] == "end_header":
            break
        else:
            raise ParseError(f"unexpected header line: {line}")
    if hdr.fmt is None:
        raise ParseError("PLY header has no format line")
    return hdr


def _parse_ply_mesh(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        hdr = _read_ply_header(fh)
        vertices = None
        faces: list = []
        try:
            for name, count, props in hdr.elements:
                if hdr.fmt == "ascii":
                    rows = _read_ascii_element(fh, count, props)
                else:
                    rows = _read_binary_element(fh, count, props)
                if name == "vertex":
                    cols = {p[-1]: i for i, p in enumerate(props) if p[0] == "scalar"}
                    if not {"x", "y", "z"} <= set(cols):
                        raise ParseError("vertex element lacks x/y/z")
                    vertices = np.array(
                        [[r[cols["x"]], r[cols["y"]], r[cols["z"]]] for r in rows], dtype=np.float64
                    )
                elif name == "face":
                    list_pos = next((i for i, p in enumerate(props) if p[0] == "list"), None)
                    if list_pos is None:
                        raise ParseError("face element has no index list")
                    for r in rows:
                        idx = r[list_pos]
                        for i in range(1, len(idx) - 1):
                            faces.append((idx[0], idx[i], idx[i + 1]))
        except struct.error as e:
            raise ParseError(f"{path.name}: truncated PLY data ({e})") from e
    if vertices is None:
        raise ParseError(f"{path.name}: no vertex element")
    return vertices, np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def _read_ascii_element(fh, count: int, props: list) -> list:
    rows = []
    for _ in range(count):
        line = fh.readline()
        if not line:
            raise ParseError("truncated ASCII PLY body")
        toks = line.split()
        row = []
        pos = 0
        for p in props:
            if p[0] == "scalar":
                row.append(float(toks[pos]))
                pos += 1
            else:
                n = int(toks[pos])
                pos += 1
                row.append([int(float(t)) for t in toks[pos : pos + n]])
                pos += n
        rows.append(row)
    return rows


def _read_binary_element(fh, count: int, props: list) -> list:
    rows = []
    simple = all(p[0] == "scalar" for p in props)
    if simple:
        dtype = np.dtype([(f"c{i}", "<" + p[1]) for i, p in enumerate(props)])
        buf = fh.read(dtype.itemsize * count)
        if len(buf) != dtype.itemsize * count:
            raise ParseError("truncated binary PLY body")
        arr = np.frombuffer(buf, dtype=dtype)
        return [tuple(float(arr[name][i]) for name in dtype.names) for i in range(count)]
    for _ in range(count):
        row = []
        for p in props:
            if p[0] == "scalar":
                dt = np.dtype("<" + p[1])
                row.append(float(np.frombuffer(fh.read(dt.itemsize), dtype=dt)[0]))
            else:
                cdt = np.dtype("<" + p[1])
                idt = np.dtype("<" + p[2])
                n = int(np.frombuffer(fh.read(cdt.itemsize), dtype=cdt)[0])
                row.append(np.frombuffer(fh.read(idt.itemsize * n), dtype=idt).astype(np.int64).tolist())
        rows.append(row)
    return rows


_CLOUD_HEADER = (
    "ply\n"
    "format binary_little_endian 1.0\n"
    "element vertex {n}\n"
    "property float x\n"
    "property float y\n"
    "property float z\n"
    "property float nx\n"
    "property float ny\n"
    "property float nz\n"
    "end_header\n"
)


def save_cloud(cloud: OrientedPointCloud, path) -> None:
    """Write the repo-wide cloud PLY format (binary LE, f32 x,y,z,nx,ny,nz)."""
    path = Path(path)
    n = len(cloud)
    data = np.zeros((n, 6), dtype="<f4")
    data[:, :3] = cloud.points.astype("<f4")
    if cloud.normals is not None:
        data[:, 3:] = cloud.normals.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_CLOUD_HEADER.format(n=n).encode("ascii"))
        fh.write(data.tobytes())


def load_cloud(path) -> OrientedPointCloud:
    """Read a cloud PLY written by :func:`save_cloud` (or compatible).

    All-zero normals are interpreted as "no normals". Normals are
    re-normalized to absorb float32 quantization.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        hdr = _read_ply_header(fh)
        if hdr.fmt != "binary_little_endian":
            raise ParseError(f"{path.name}: cloud PLY must be binary little-endian")
        if not hdr.elements or hdr.elements[0][0] != "vertex":
            raise ParseError(f"{path.name}: first element must be vertex")
        name, count, props = hdr.elements[0]
        names = [p[-1] for p in props]
        if any(p[0] != "scalar" or p[1] != "f4" for p in props):
            raise ParseError(f"{path.name}: cloud properties must be float32 scalars")
        dtype = np.dtype([(nm, "<f4") for nm in names])
        buf = fh.read(dtype.itemsize * count)
        if len(buf) != dtype.itemsize * count:
            raise ParseError(f"{path.name}: truncated cloud data")
        arr = np.frombuffer(buf, dtype=dtype)
    if not {"x", "y", "z"} <= set(names):
        raise ParseError(f"{path.name}: cloud lacks x/y/z")
    pts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
    normals = None
    if {"nx", "ny", "nz"} <= set(names):
        nrm = np.stack([arr["nx"], arr["ny"], arr["nz"]], axis=1).astype(np.float64)
        norms = np.linalg.norm(nrm, axis=1)
        if np.any(norms > 0):
            if np.any(norms <= 0):
                raise ParseError(f"{path.name}: mixed zero and nonzero normals")
            normals = nrm / norms[:, None]
    return OrientedPointCloud(points=pts, normals=normals)
