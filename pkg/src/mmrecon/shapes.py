"""Synthetic primitive meshes for fixtures and training corpora.

All constructors return outward-wound :class:`TriangleMesh` instances centered
at the origin, sized in meters.
"""

from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh

KINDS = ("sphere", "cube", "cylinder", "l_bracket", "ellipsoid")


def box_mesh(size=(0.16, 0.16, 0.16)) -> TriangleMesh:
    sx, sy, sz = (float(s) / 2.0 for s in size)
    v = np.array(
        [
            [-sx, -sy, -sz], [sx, -sy, -sz], [sx, sy, -sz], [-sx, sy, -sz],
            [-sx, -sy, sz], [sx, -sy, sz], [sx, sy, sz], [-sx, sy, sz],
        ]
    )
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom (-z)
            [4, 5, 6], [4, 6, 7],  # top (+z)
            [0, 1, 5], [0, 5, 4],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [1, 2, 6], [1, 6, 5],  # +x
            [3, 0, 4], [3, 4, 7],  # -x
        ]
    )
    return TriangleMesh(vertices=v, faces=f)


def sphere_mesh(radius=0.09, rings=24, segments=48) -> TriangleMesh:
    """UV sphere; poles are shared vertices."""
    r = float(radius)
    verts = [np.array([0.0, 0.0, r])]
    for i in range(1, rings):
        phi = np.pi * i / rings
        for j in range(segments):
            th = 2 * np.pi * j / segments
            verts.append(r * np.array([np.sin(phi) * np.cos(th), np.sin(phi) * np.sin(th), np.cos(phi)]))
    verts.append(np.array([0.0, 0.0, -r]))
    south = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * segments + (j % segments)

    faces = []
    for j in range(segments):  # top cap
        faces.append([0, ring(1, j), ring(1, j + 1)])
    for i in range(1, rings - 1):
        for j in range(segments):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append([a, c, d])
            faces.append([a, d, b])
    for j in range(segments):  # bottom cap
        faces.append([south, ring(rings - 1, j + 1), ring(rings - 1, j)])
    return TriangleMesh(vertices=np.asarray(verts), faces=np.asarray(faces))


def ellipsoid_mesh(radii=(0.10, 0.07, 0.05), rings=24, segments=48) -> TriangleMesh:
    base = sphere_mesh(radius=1.0, rings=rings, segments=segments)
    return TriangleMesh(vertices=base.vertices * np.asarray(radii, dtype=np.float64), faces=base.faces)


def cylinder_mesh(radius=0.05, height=0.16, segments=48) -> TriangleMesh:
    """Capped cylinder with axis along z."""
    r, h = float(radius), float(height) / 2.0
    th = 2 * np.pi * np.arange(segments) / segments
    top = np.stack([r * np.cos(th), r * np.sin(th), np.full(segments, h)], axis=1)
    bot = np.stack([r * np.cos(th), r * np.sin(th), np.full(segments, -h)], axis=1)
    verts = np.vstack([top, bot, [[0, 0, h]], [[0, 0, -h]]])
    ctop, cbot = 2 * segments, 2 * segments + 1
    faces = []
    for j in range(segments):
        a, b = j, (j + 1) % segments
        c, d = segments + j, segments + (j + 1) % segments
        faces.append([a, c, d])  # side
        faces.append([a, d, b])
        faces.append([ctop, a, b])  # top cap
        faces.append([cbot, d, c])  # bottom cap
    return TriangleMesh(vertices=verts, faces=np.asarray(faces))


def l_bracket_mesh(leg_a=0.18, leg_b=0.14, thickness=0.06, depth=0.10) -> TriangleMesh:
    """L-shaped prism: legs along +x and +y, extruded along z, centered."""
    a, b, t, d = float(leg_a), float(leg_b), float(thickness), float(depth) / 2.0
    # L outline, counter-clockwise seen from +z
    outline = np.array(
        [[0, 0], [a, 0], [a, t], [t, t], [t, b], [0, b]], dtype=np.float64
    )
    outline -= outline.mean(axis=0)
    top = np.hstack([outline, np.full((6, 1), d)])
    bot = np.hstack([outline, np.full((6, 1), -d)])
    verts = np.vstack([top, bot])

    # caps: L = rectangle (0,1,2,3') + rectangle (3',... ) triangulated by hand
    cap = [[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 5]]
    faces = [list(f) for f in cap]  # top, CCW from +z
    faces += [[f[0] + 6, f[2] + 6, f[1] + 6] for f in cap]  # bottom, flipped
    for j in range(6):  # sides
        k = (j + 1) % 6
        faces.append([j, j + 6, k + 6])
        faces.append([j, k + 6, k])
    return TriangleMesh(vertices=verts, faces=np.asarray(faces))


def make_shape(kind: str, **kwargs) -> TriangleMesh:
    if kind == "sphere":
        return sphere_mesh(**kwargs)
    if kind == "cube":
        return box_mesh(**kwargs)
    if kind == "cylinder":
        return cylinder_mesh(**kwargs)
    if kind == "l_bracket":
        return l_bracket_mesh(**kwargs)
    if kind == "ellipsoid":
        return ellipsoid_mesh(**kwargs)
    raise ValueError(f"unknown shape kind: {kind!r} (want one of {KINDS})")


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    ax = np.asarray(axis, dtype=np.float64)
    ax = ax / np.linalg.norm(ax)
    k = np.array([[0, -ax[2], ax[1]], [ax[2], 0, -ax[0]], [-ax[1], ax[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def transformed(mesh: TriangleMesh, rotation=None, translation=None, scale=1.0) -> TriangleMesh:
    v = mesh.vertices * float(scale)
    if rotation is not None:
        v = v @ np.asarray(rotation, dtype=np.float64).T
    if translation is not None:
        v = v + np.asarray(translation, dtype=np.float64)
    return TriangleMesh(vertices=v, faces=mesh.faces)


def random_primitive(rng: np.random.Generator, max_extent=0.22, min_extent=0.08) -> TriangleMesh:
    """Random primitive with random anisotropic size and orientation."""
    kind = KINDS[rng.integers(len(KINDS))]
    lo, hi = min_extent, max_extent
    if kind == "sphere":
        mesh = sphere_mesh(radius=rng.uniform(lo, hi) / 2)
    elif kind == "cube":
        mesh = box_mesh(size=rng.uniform(lo, hi, size=3))
    elif kind == "cylinder":
        mesh = cylinder_mesh(radius=rng.uniform(lo, hi) / 3, height=rng.uniform(lo, hi))
    elif kind == "l_bracket":
        a = rng.uniform(0.6 * hi, hi)
        mesh = l_bracket_mesh(leg_a=a, leg_b=rng.uniform(lo, a), thickness=rng.uniform(0.2, 0.45) * a, depth=rng.uniform(lo, hi) * 0.6)
    else:
        mesh = ellipsoid_mesh(radii=rng.uniform(lo / 2, hi / 2, size=3))
    rot = rotation_about(rng.normal(size=3), rng.uniform(0, 2 * np.pi))
    return transformed(mesh, rotation=rot)
