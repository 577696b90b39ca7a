"""Gaussian-splat PLY input/output.

Reads the binary little-endian PLY layout used by 3DGS exporters (per-vertex
x,y,z, f_dc_0..2, opacity, scale_0..2, rot_0..3; any f_rest_* bands are
parsed and ignored), decodes stored parameters into physical values, and
normalizes the cloud so its bounding-box diagonal equals 1.

Primitive order is the stable identity used by every downstream module; the
loader never reorders.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Tuple

import numpy as np

from .errors import DataError, FormatError

# DC spherical-harmonics basis constant: color = 0.5 + C0 * f_dc.
SH_C0 = 0.28209479177387814

REQUIRED_PROPERTIES = (
    "x", "y", "z",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)

_PLY_DTYPES = {
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1",
    "char": "i1", "int8": "i1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
}


@dataclass(frozen=True)
class GaussianSplat:
    """One decoded Gaussian primitive in normalized plant units."""

    center: np.ndarray    # (3,)
    scale: np.ndarray     # (3,) linear extents, > 0
    rotation: np.ndarray  # (4,) unit quaternion (w, x, y, z)
    opacity: float        # in [0, 1]
    color_dc: np.ndarray  # (3,) RGB in [0, 1]


@dataclass(frozen=True)
class Normalization:
    """Similarity transform from raw file coordinates to normalized ones.

    normalized = (raw - translation) * scale
    """

    scale: float
    translation: np.ndarray  # (3,)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.translation


class SplatCloud:
    """Decoded splats of one plant, stored as parallel arrays.

    Index i refers to the same primitive everywhere in the pipeline.
    The instance is immutable by convention and safe to share across threads.
    """

    def __init__(self, centers: np.ndarray, scales: np.ndarray,
                 rotations: np.ndarray, opacities: np.ndarray,
                 colors: np.ndarray, normalization: Normalization):
        self.centers = np.ascontiguousarray(centers, dtype=np.float64)
        self.scales = np.ascontiguousarray(scales, dtype=np.float64)
        self.rotations = np.ascontiguousarray(rotations, dtype=np.float64)
        self.opacities = np.ascontiguousarray(opacities, dtype=np.float64)
        self.colors = np.ascontiguousarray(colors, dtype=np.float64)
        self.normalization = normalization

    def __len__(self) -> int:
        return self.centers.shape[0]

    def splat(self, index: int) -> GaussianSplat:
        return GaussianSplat(
            center=self.centers[index].copy(),
            scale=self.scales[index].copy(),
            rotation=self.rotations[index].copy(),
            opacity=float(self.opacities[index]),
            color_dc=self.colors[index].copy(),
        )

    def __iter__(self) -> Iterator[GaussianSplat]:
        return (self.splat(i) for i in range(len(self)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    return np.log(p) - np.log1p(-p)


def decode_raw(raw: dict) -> GaussianSplat:
    """Decode one raw PLY record (dict of stored property values).

    Pure function; raises DataError on non-finite input.
    """
    values = np.array([float(raw[name]) for name in REQUIRED_PROPERTIES])
    if not np.all(np.isfinite(values)):
        bad = REQUIRED_PROPERTIES[int(np.argmin(np.isfinite(values)))]
        raise DataError(f"non-finite value in property '{bad}'")
    center = values[0:3]
    f_dc = values[3:6]
    opacity = float(sigmoid(values[6]))
    scale = np.exp(values[7:10])
    rot = values[10:14]
    norm = np.linalg.norm(rot)
    if norm == 0.0:
        raise DataError("zero-norm rotation quaternion")
    return GaussianSplat(
        center=center,
        scale=scale,
        rotation=rot / norm,
        opacity=opacity,
        color_dc=np.clip(0.5 + SH_C0 * f_dc, 0.0, 1.0),
    )


def encode_splat(splat: GaussianSplat) -> dict:
    """Inverse of decode_raw, up to opacity clamping away from {0, 1}."""
    record = {
        "x": splat.center[0], "y": splat.center[1], "z": splat.center[2],
        "f_dc_0": (splat.color_dc[0] - 0.5) / SH_C0,
        "f_dc_1": (splat.color_dc[1] - 0.5) / SH_C0,
        "f_dc_2": (splat.color_dc[2] - 0.5) / SH_C0,
        "opacity": float(logit(splat.opacity)),
        "scale_0": np.log(splat.scale[0]),
        "scale_1": np.log(splat.scale[1]),
        "scale_2": np.log(splat.scale[2]),
        "rot_0": splat.rotation[0], "rot_1": splat.rotation[1],
        "rot_2": splat.rotation[2], "rot_3": splat.rotation[3],
    }
    return {k: float(v) for k, v in record.items()}


def compute_normalization(centers: np.ndarray) -> Normalization:
    """Similarity placing the bbox center at the origin with unit diagonal."""
    lo = centers.min(axis=0)
    hi = centers.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    if diag <= 0.0:
        raise DataError("cloud has zero spatial extent")
    return Normalization(scale=1.0 / diag, translation=(lo + hi) / 2.0)


def _parse_header(fh) -> Tuple[List[Tuple[str, str]], int, int]:
    """Return ([(name, dtype)...], vertex_count, data_offset)."""
    magic = fh.readline().strip()
    if magic != b"ply":
        raise FormatError("not a PLY file")
    fmt = None
    properties: List[Tuple[str, str]] = []
    count = None
    in_vertex = False
    while True:
        line = fh.readline()
        if not line:
            raise FormatError("unterminated PLY header")
        tokens = line.decode("ascii", "replace").strip().split()
        if not tokens:
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                count = int(tokens[2])
        elif tokens[0] == "property" and in_vertex:
            if tokens[1] == "list":
                raise FormatError("list properties are not supported on vertices")
            properties.append((tokens[2], tokens[1]))
        elif tokens[0] == "end_header":
            break
    if fmt != "binary_little_endian":
        raise FormatError(f"unsupported PLY format '{fmt}'")
    if count is None:
        raise FormatError("missing vertex element")
    return properties, count, fh.tell()


def load_splat_ply(path: str | Path) -> SplatCloud:
    """Load and decode a 3DGS PLY file into a normalized SplatCloud."""
    path = Path(path)
    with open(path, "rb") as fh:
        properties, count, offset = _parse_header(fh)
        names = [name for name, _ in properties]
        for required in REQUIRED_PROPERTIES:
            if required not in names:
                raise FormatError(f"missing required vertex property '{required}'")
        if count == 0:
            raise DataError(f"'{path}' contains zero vertices")
        dtype = np.dtype([(name, _PLY_DTYPES[kind]) for name, kind in properties])
        fh.seek(offset)
        blob = fh.read(dtype.itemsize * count)
    if len(blob) < dtype.itemsize * count:
        raise FormatError("truncated PLY payload")
    table = np.frombuffer(blob, dtype=dtype, count=count)

    columns = np.stack(
        [table[name].astype(np.float64) for name in REQUIRED_PROPERTIES], axis=1)
    finite = np.isfinite(columns).all(axis=1)
    if not finite.all():
        raise DataError(f"non-finite values at primitive index {int(np.argmin(finite))}")

    centers = columns[:, 0:3]
    colors = np.clip(0.5 + SH_C0 * columns[:, 3:6], 0.0, 1.0)
    opacities = sigmoid(columns[:, 6])
    scales = np.exp(columns[:, 7:10])
    rotations = columns[:, 10:14]
    norms = np.linalg.norm(rotations, axis=1)
    if np.any(norms == 0.0):
        raise DataError(
            f"zero-norm quaternion at primitive index {int(np.argmin(norms > 0))}")
    rotations = rotations / norms[:, None]

    normalization = compute_normalization(centers)
    return SplatCloud(
        centers=normalization.apply(centers),
        scales=scales * normalization.scale,
        rotations=rotations,
        opacities=opacities,
        colors=colors,
        normalization=normalization,
    )


def write_splat_ply(path: str | Path, centers: np.ndarray, scales: np.ndarray,
                    rotations: np.ndarray, opacities: np.ndarray,
                    colors: np.ndarray) -> None:
    """Write decoded values back to the standard 3DGS layout.

    Inputs are physical values (same conventions as SplatCloud fields);
    they are re-encoded with the inverse decode rules.
    """
    centers = np.asarray(centers, dtype=np.float64)
    n = centers.shape[0]
    table = np.empty(n, dtype=np.dtype([(p, "<f4") for p in REQUIRED_PROPERTIES]))
    table["x"], table["y"], table["z"] = centers[:, 0], centers[:, 1], centers[:, 2]
    f_dc = (np.asarray(colors, dtype=np.float64) - 0.5) / SH_C0
    table["f_dc_0"], table["f_dc_1"], table["f_dc_2"] = f_dc[:, 0], f_dc[:, 1], f_dc[:, 2]
    table["opacity"] = logit(opacities)
    log_scale = np.log(np.asarray(scales, dtype=np.float64))
    table["scale_0"], table["scale_1"], table["scale_2"] = (
        log_scale[:, 0], log_scale[:, 1], log_scale[:, 2])
    rot = np.asarray(rotations, dtype=np.float64)
    table["rot_0"], table["rot_1"], table["rot_2"], table["rot_3"] = (
        rot[:, 0], rot[:, 1], rot[:, 2], rot[:, 3])

    header_lines = ["ply", "format binary_little_endian 1.0",
                    f"element vertex {n}"]
    header_lines += [f"property float {p}" for p in REQUIRED_PROPERTIES]
    header_lines.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header_lines) + "\n").encode("ascii"))
        fh.write(table.tobytes())
