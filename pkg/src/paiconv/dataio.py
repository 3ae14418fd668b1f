"""Datasets: synthetic shape classes, OFF meshes, XYZ point files.

The synthetic generator exists so the whole pipeline can be exercised
and trained in seconds without any external data.  Sphere clouds are
built from exactly cancelling antipodal pairs (plus one zero-sum triple
when the count is odd) so that after centering the points still sit on
the unit sphere to high precision; tests rely on that.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .neighbors import PointCloud
from .numkit import ContractError

SYNTH_CLASSES = ("sphere", "cube", "torus")

TORUS_R = 1.0
TORUS_TUBE = 0.4


class ParseError(ValueError):
    """Malformed input file; message carries path and line number."""


@dataclass
class Dataset:
    samples: list  # (PointCloud, int label)
    class_names: list

    def __len__(self):
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([lbl for _, lbl in self.samples], dtype=np.int64)


# ------------------------------------------------------------ normalization

def normalize_unit_sphere(cloud: PointCloud) -> PointCloud:
    """Center on the centroid, scale so the farthest point has norm 1.

    A cloud whose points are all identical stays at the origin instead
    of dividing by zero.
    """
    c = cloud.coords - cloud.coords.mean(axis=0)
    rmax = np.linalg.norm(c, axis=1).max()
    if rmax > 0:
        c = c / rmax
    return PointCloud(c, features=cloud.features)


# ------------------------------------------------------------ synthetic set

def sample_sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    """n points on the unit sphere with an exactly zero-sum construction.

    Antipodal pairs cancel exactly in floating point; an odd count adds
    one planar triple u, -u/2 + sw, -u/2 - sw whose sum is zero to
    rounding.  Centering therefore barely moves the points and they
    remain unit-radius after normalize_unit_sphere.
    """
    if n < 1:
        raise ContractError("need n >= 1")
    pts = []
    remaining = n
    if n % 2 == 1 and n >= 3:
        u = _unit_rows(rng, 1)[0]
        t = _unit_rows(rng, 1)[0]
        w = np.cross(u, t)
        while np.linalg.norm(w) < 1e-6:  # re-draw a tangent if parallel
            t = _unit_rows(rng, 1)[0]
            w = np.cross(u, t)
        w /= np.linalg.norm(w)
        s = np.sqrt(3.0) / 2.0
        pts.append(np.stack([u, -0.5 * u + s * w, -0.5 * u - s * w]))
        remaining -= 3
    if remaining % 2 == 1:  # n == 1
        pts.append(_unit_rows(rng, 1))
        remaining -= 1
    if remaining:
        v = _unit_rows(rng, remaining // 2)
        pts.append(np.concatenate([v, -v]))
    return np.concatenate(pts)


def _unit_rows(rng: np.random.Generator, m: int) -> np.ndarray:
    v = rng.standard_normal((m, 3))
    norms = np.linalg.norm(v, axis=1)
    while (norms < 1e-12).any():
        bad = norms < 1e-12
        v[bad] = rng.standard_normal((int(bad.sum()), 3))
        norms = np.linalg.norm(v, axis=1)
    return v / norms[:, None]


def sample_cube(n: int, rng: np.random.Generator) -> np.ndarray:
    """n points uniform on the surface of the axis-aligned cube [-1, 1]^3."""
    if n < 1:
        raise ContractError("need n >= 1")
    axis = rng.integers(0, 3, n)
    sign = rng.choice([-1.0, 1.0], n)
    uv = rng.uniform(-1.0, 1.0, (n, 2))
    pts = np.empty((n, 3))
    for a in range(3):
        rows = axis == a
        others = [i for i in range(3) if i != a]
        pts[rows, a] = sign[rows]
        pts[np.ix_(rows, others)] = uv[rows]
    return pts


def sample_torus(n: int, rng: np.random.Generator,
                 ring: float = TORUS_R, tube: float = TORUS_TUBE) -> np.ndarray:
    """n points area-uniform on a torus (ring radius, tube radius).

    The surface element is proportional to 1 + (tube/ring) cos(theta),
    so tube angles are drawn by rejection against that density rather
    than uniformly; otherwise the inner rim would be oversampled.
    """
    if n < 1:
        raise ContractError("need n >= 1")
    ratio = tube / ring
    theta = np.empty(0)
    while theta.size < n:
        cand = rng.uniform(0.0, 2.0 * np.pi, 2 * (n - theta.size) + 16)
        accept = rng.uniform(0.0, 1.0, cand.size) < (1.0 + ratio * np.cos(cand)) / (1.0 + ratio)
        theta = np.concatenate([theta, cand[accept]])
    theta = theta[:n]
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    rad = ring + tube * np.cos(theta)
    return np.stack([rad * np.cos(phi), rad * np.sin(phi), tube * np.sin(theta)], axis=1)


_SAMPLERS = {"sphere": sample_sphere, "cube": sample_cube, "torus": sample_torus}


def synth_shapes(per_class: int, n_points: int, rng: np.random.Generator,
                 classes=SYNTH_CLASSES) -> Dataset:
    """Labeled dataset of normalized synthetic clouds, classes interleaved."""
    for c in classes:
        if c not in _SAMPLERS:
            raise ContractError(f"unknown synthetic class {c!r}; known: {sorted(_SAMPLERS)}")
    samples = []
    for i in range(per_class):
        for label, name in enumerate(classes):
            pts = _SAMPLERS[name](n_points, rng)
            samples.append((normalize_unit_sphere(PointCloud(pts)), label))
    return Dataset(samples=samples, class_names=list(classes))


# ------------------------------------------------------------- augmentation

@dataclass(frozen=True)
class AugmentConfig:
    scale_lo: float = 2.0 / 3.0
    scale_hi: float = 3.0 / 2.0
    translate: float = 0.2
    jitter_sigma: float = 0.01


def augment(cloud: PointCloud, cfg: AugmentConfig,
            rng: np.random.Generator) -> PointCloud:
    """Random isotropic scale, then translation, then per-point jitter.

    Scale and translation are drawn once per cloud, jitter per point.
    Features pass through untouched.
    """
    s = rng.uniform(cfg.scale_lo, cfg.scale_hi)
    t = rng.uniform(-cfg.translate, cfg.translate, 3)
    noise = rng.normal(0.0, cfg.jitter_sigma, cloud.coords.shape) if cfg.jitter_sigma > 0 \
        else 0.0
    return PointCloud(cloud.coords * s + t + noise, features=cloud.features)


# ---------------------------------------------------------------- OFF files

@dataclass
class Mesh:
    vertices: np.ndarray  # (v, 3)
    faces: np.ndarray     # (f, 3) int64, fan-triangulated


def parse_off(path) -> Mesh:
    """Read an OFF mesh; polygons are fan-triangulated.

    Accepts the common header variants: counts on the line after "OFF"
    or crammed onto the header line itself.  Raises ParseError with a
    line number on anything structurally wrong.
    """
    with open(path, encoding="ascii", errors="replace") as f:
        raw = f.readlines()

    def fail(lineno, msg):
        raise ParseError(f"{path}:{lineno}: {msg}")

    # strip comments and blanks but remember source line numbers
    rows = []
    for i, ln in enumerate(raw, start=1):
        body = ln.split("#", 1)[0].strip()
        if body:
            rows.append((i, body))
    if not rows:
        fail(1, "empty file")
    lineno, header = rows[0]
    if not header.startswith("OFF"):
        fail(lineno, "missing OFF header")
    rest = header[3:].strip()
    cursor = 1
    if rest:
        counts_text, counts_line = rest, lineno
    else:
        if len(rows) < 2:
            fail(lineno, "missing counts line")
        counts_line, counts_text = rows[1]
        cursor = 2
    parts = counts_text.split()
    if len(parts) < 2:
        fail(counts_line, f"expected vertex/face counts, got {counts_text!r}")
    try:
        nv, nf = int(parts[0]), int(parts[1])
    except ValueError:
        fail(counts_line, f"bad counts {counts_text!r}")
    if nv < 1 or nf < 0:
        fail(counts_line, f"bad counts nv={nv} nf={nf}")
    if len(rows) < cursor + nv + nf:
        fail(rows[-1][0], f"file ends early: need {nv} vertices and {nf} faces")

    verts = np.empty((nv, 3))
    for r in range(nv):
        lineno, text = rows[cursor + r]
        parts = text.split()
        if len(parts) < 3:
            fail(lineno, f"vertex needs 3 coordinates, got {text!r}")
        try:
            verts[r] = [float(x) for x in parts[:3]]
        except ValueError:
            fail(lineno, f"bad vertex {text!r}")
    if not np.isfinite(verts).all():
        fail(rows[cursor][0], "non-finite vertex coordinates")

    tris = []
    for r in range(nf):
        lineno, text = rows[cursor + nv + r]
        parts = text.split()
        try:
            cnt = int(parts[0])
            ids = [int(x) for x in parts[1:1 + cnt]]
        except (ValueError, IndexError):
            fail(lineno, f"bad face {text!r}")
        if cnt < 3 or len(ids) != cnt:
            fail(lineno, f"face needs >= 3 vertex ids, got {text!r}")
        if min(ids) < 0 or max(ids) >= nv:
            fail(lineno, f"face index out of range in {text!r}")
        for t in range(1, cnt - 1):
            tris.append((ids[0], ids[t], ids[t + 1]))
    if not tris:
        fail(rows[-1][0], "mesh has no faces")
    return Mesh(vertices=verts, faces=np.array(tris, dtype=np.int64))


def sample_mesh(mesh: Mesh, n: int, rng: np.random.Generator) -> PointCloud:
    """n points area-uniform on the mesh surface.

    Faces are chosen with probability proportional to area (degenerate
    zero-area faces are never chosen), positions are uniform barycentric
    within the face.
    """
    if n < 1:
        raise ContractError("need n >= 1")
    a = mesh.vertices[mesh.faces[:, 0]]
    b = mesh.vertices[mesh.faces[:, 1]]
    c = mesh.vertices[mesh.faces[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    total = areas.sum()
    if total <= 0:
        raise ContractError("mesh has zero total surface area")
    pick = rng.choice(areas.size, size=n, p=areas / total)
    u = rng.uniform(0.0, 1.0, n)
    v = rng.uniform(0.0, 1.0, n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    pts = a[pick] + u[:, None] * (b[pick] - a[pick]) + v[:, None] * (c[pick] - a[pick])
    return PointCloud(pts)


# ---------------------------------------------------------------- XYZ files

def write_xyz(path, cloud: PointCloud) -> None:
    """One point per line: x y z then any feature columns, %.17g each.

    17 significant digits round-trip float64 exactly, so
    parse_xyz(write_xyz(c)) reproduces the cloud bit for bit.
    """
    with open(path, "w", encoding="ascii") as f:
        f.write("# x y z%s\n" % (" +features" if cloud.features is not None else ""))
        for i in range(cloud.n):
            row = list(cloud.coords[i])
            if cloud.features is not None:
                row += list(cloud.features[i])
            f.write(" ".join("%.17g" % v for v in row) + "\n")


def parse_xyz(path) -> PointCloud:
    """Read write_xyz output (or any whitespace-separated point file)."""
    coords = []
    feats = []
    width = None
    with open(path, encoding="ascii", errors="replace") as f:
        for lineno, ln in enumerate(f, start=1):
            body = ln.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) < 3:
                raise ParseError(f"{path}:{lineno}: need at least x y z, got {body!r}")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ParseError(
                    f"{path}:{lineno}: expected {width} columns, got {len(parts)}")
            try:
                vals = [float(x) for x in parts]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad number in {body!r}") from None
            coords.append(vals[:3])
            feats.append(vals[3:])
    if not coords:
        raise ParseError(f"{path}:1: no points")
    fmat = np.array(feats) if width > 3 else None
    return PointCloud(np.array(coords), features=fmat)


# ----------------------------------------------------------------- manifest

def load_manifest(path, n_points: int, rng: np.random.Generator) -> Dataset:
    """Labeled dataset from a tab-separated manifest of files.

    Each line is "relative/path<TAB>class_name"; paths resolve against
    the manifest's own directory.  OFF meshes are surface-sampled to
    n_points, XYZ files are taken as-is.  Labels are assigned by sorted
    class name so they are stable across manifest orderings.
    """
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, encoding="utf-8") as f:
        for lineno, ln in enumerate(f, start=1):
            body = ln.split("#", 1)[0].rstrip("\n")
            if not body.strip():
                continue
            if "\t" not in body:
                raise ParseError(f"{path}:{lineno}: expected 'file<TAB>class', got {body!r}")
            rel, cls = body.split("\t", 1)
            rel, cls = rel.strip(), cls.strip()
            if not rel or not cls:
                raise ParseError(f"{path}:{lineno}: empty file or class field")
            entries.append((lineno, rel, cls))
    if not entries:
        raise ParseError(f"{path}:1: manifest lists no files")
    class_names = sorted({cls for _, _, cls in entries})
    label_of = {c: i for i, c in enumerate(class_names)}
    samples = []
    for lineno, rel, cls in entries:
        full = os.path.join(base, rel)
        if rel.lower().endswith(".off"):
            cloud = sample_mesh(parse_off(full), n_points, rng)
        elif rel.lower().endswith(".xyz"):
            cloud = parse_xyz(full)
        else:
            raise ParseError(f"{path}:{lineno}: unsupported extension in {rel!r}")
        samples.append((normalize_unit_sphere(cloud), label_of[cls]))
    return Dataset(samples=samples, class_names=class_names)
