"""The compact instanced asset: one template, per-leaf control sets.

Storage is O(|V|) for the shared template plus O(K*N) for the per-leaf
handles and frames; no per-leaf geometry exists anywhere in the container.
Every numeric field is quantized to float32 when the asset is assembled, so
an export/import round trip is bit-exact and repeated exports are
byte-identical.

Directory layout: manifest.json (versioned, with content checksums),
template.obj + template.png, stem.obj, controls.bin.  The binary layout is
little-endian f32: K, N, the K template control rows, N*K target control
rows, then N frames of 12 floats (row-major rotation plus translation).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from PIL import Image

from .errors import AssetError, ParameterError
from .meshing import (PlanarMap, TemplateMesh, TextureImage, read_obj,
                      write_obj)
from .registration import ControlSet, LeafFrame, evaluate_mls
from .stem import StemMesh, write_stem_obj

ASSET_VERSION = 1


def _f32(arr) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(arr), dtype=np.float32)


@dataclass
class PlantAsset:
    template_mesh: TemplateMesh
    texture: TextureImage
    template_controls: np.ndarray          # (K, 3) float32
    leaf_controls: np.ndarray              # (N, K, 3) float32
    leaf_frames_rot: np.ndarray            # (N, 3, 3) float32
    leaf_frames_t: np.ndarray              # (N, 3) float32
    stem_mesh: StemMesh
    manifest: Dict

    @property
    def control_count(self) -> int:
        return self.template_controls.shape[0]

    @property
    def leaf_count(self) -> int:
        return self.leaf_controls.shape[0]

    @classmethod
    def build(cls, mesh: TemplateMesh, texture: TextureImage,
              c_t: ControlSet, leaf_controls: List[ControlSet],
              frames: List[LeafFrame], stem: StemMesh,
              manifest: Dict) -> "PlantAsset":
        if any(c.count != c_t.count for c in leaf_controls):
            raise ParameterError("all control sets must share the template K")
        quant_mesh = TemplateMesh(
            vertices=_f32(mesh.vertices).astype(np.float64),
            faces=mesh.faces.copy(),
            normals=_f32(mesh.normals).astype(np.float64),
            uvs=_f32(mesh.uvs).astype(np.float64),
            planar=mesh.planar, two_sided=mesh.two_sided,
            face_side=mesh.face_side.copy(),
            base_vertex_count=int(mesh.base_vertex_count))
        quant_stem = StemMesh(
            vertices=_f32(stem.vertices).astype(np.float64),
            faces=stem.faces.copy(), edge_radii=dict(stem.edge_radii))
        return cls(
            template_mesh=quant_mesh,
            texture=texture,
            template_controls=_f32(c_t.positions),
            leaf_controls=_f32(np.stack([c.positions for c in leaf_controls])),
            leaf_frames_rot=_f32(np.stack([f.rotation for f in frames])),
            leaf_frames_t=_f32(np.stack([f.translation for f in frames])),
            stem_mesh=quant_stem,
            manifest=dict(manifest),
        )

    def frame(self, leaf_id: int) -> LeafFrame:
        return LeafFrame(
            rotation=self.leaf_frames_rot[leaf_id].astype(np.float64),
            translation=self.leaf_frames_t[leaf_id].astype(np.float64))


def evaluate_leaf(asset: PlantAsset, leaf_id: int,
                  sigma: Optional[float] = None) -> np.ndarray:
    """Deform the template vertices by one leaf's controls, in plant space.

    Pure and deterministic: identical calls return identical arrays.  This
    is the reference CPU evaluation path (O(|V| K) per leaf).
    """
    if not 0 <= leaf_id < asset.leaf_count:
        raise ParameterError(f"unknown leaf id {leaf_id}")
    if sigma is None:
        sigma = float(asset.manifest.get("sigma", 0.1))
    ct = asset.template_controls.astype(np.float64)
    cj = asset.leaf_controls[leaf_id].astype(np.float64)
    deformed = evaluate_mls(ct, cj, asset.template_mesh.vertices, sigma)
    return asset.frame(leaf_id).to_plant(deformed)


def controls_blob(asset: PlantAsset) -> bytes:
    k = asset.control_count
    n = asset.leaf_count
    header = np.array([k, n], dtype="<f4")
    parts = [header.tobytes(),
             asset.template_controls.astype("<f4").tobytes(),
             asset.leaf_controls.astype("<f4").tobytes()]
    for i in range(n):
        frame = np.concatenate([asset.leaf_frames_rot[i].reshape(9),
                                asset.leaf_frames_t[i]])
        parts.append(frame.astype("<f4").tobytes())
    return b"".join(parts)


def _parse_controls(blob: bytes):
    header = np.frombuffer(blob[:8], dtype="<f4")
    k, n = int(header[0]), int(header[1])
    expected = 4 * (2 + 3 * k + 3 * n * k + 12 * n)
    if len(blob) != expected:
        raise AssetError(
            f"controls.bin is {len(blob)} bytes, expected {expected}")
    off = 8
    ct = np.frombuffer(blob[off:off + 12 * k], dtype="<f4").reshape(k, 3)
    off += 12 * k
    cj = np.frombuffer(blob[off:off + 12 * n * k],
                       dtype="<f4").reshape(n, k, 3)
    off += 12 * n * k
    frames = np.frombuffer(blob[off:], dtype="<f4").reshape(n, 12)
    rot = frames[:, :9].reshape(n, 3, 3)
    t = frames[:, 9:]
    return ct.copy(), cj.copy(), rot.copy(), t.copy()


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def export_asset(asset: PlantAsset, directory) -> Path:
    """Write the asset directory; returns its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    write_obj(directory / "template.obj", asset.template_mesh,
              texture_name="template.png", object_name="template_leaf")
    Image.fromarray(asset.texture.pixels, mode="RGBA").save(
        directory / "template.png")
    write_stem_obj(directory / "stem.obj", asset.stem_mesh)
    blob = controls_blob(asset)
    (directory / "controls.bin").write_bytes(blob)

    manifest = dict(asset.manifest)
    manifest["version"] = ASSET_VERSION
    manifest["control_count"] = asset.control_count
    manifest["leaf_count"] = asset.leaf_count
    manifest["planar"] = {"center_x": asset.template_mesh.planar.center_x,
                          "center_y": asset.template_mesh.planar.center_y,
                          "half_extent": asset.template_mesh.planar.half_extent}
    manifest["base_vertex_count"] = asset.template_mesh.base_vertex_count
    manifest["checksums"] = {
        name: _sha256((directory / name).read_bytes())
        for name in ("template.obj", "template.png", "stem.obj",
                     "controls.bin")}
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True))
    return directory


def import_asset(directory) -> PlantAsset:
    """Read an asset directory back, verifying version and checksums."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("version") != ASSET_VERSION:
        raise AssetError(
            f"asset version {manifest.get('version')} needs migration "
            f"(supported: {ASSET_VERSION})")
    for name, expected in manifest.get("checksums", {}).items():
        actual = _sha256((directory / name).read_bytes())
        if actual != expected:
            raise AssetError(f"checksum mismatch for {name}: asset corrupt")

    verts, uvs, normals, faces = read_obj(directory / "template.obj")
    # OBJ text carries 9 significant digits: exact for the float32-quantized
    # asset values once squeezed back through float32
    verts = verts.astype(np.float32).astype(np.float64)
    uvs = uvs.astype(np.float32).astype(np.float64)
    normals = normals.astype(np.float32).astype(np.float64)
    planar = PlanarMap(**manifest["planar"])
    n_front = faces.shape[0] // 2
    side = np.concatenate([np.zeros(n_front, dtype=np.int8),
                           np.ones(faces.shape[0] - n_front, dtype=np.int8)])
    mesh = TemplateMesh(vertices=verts, faces=faces, normals=normals,
                        uvs=uvs, planar=planar, two_sided=True,
                        face_side=side,
                        base_vertex_count=manifest.get("base_vertex_count", 0))
    pixels = np.asarray(Image.open(directory / "template.png").convert("RGBA"))
    texture = TextureImage(pixels=pixels)

    ct, cj, rot, t = _parse_controls((directory / "controls.bin").read_bytes())
    sv, _, _, sf = read_obj(directory / "stem.obj")
    sv = sv.astype(np.float32).astype(np.float64) if sv.size else np.zeros((0, 3))
    stem = StemMesh(vertices=sv,
                    faces=sf if sf.size else np.zeros((0, 3), dtype=np.int64))

    extra = {k: v for k, v in manifest.items() if k != "checksums"}
    return PlantAsset(template_mesh=mesh, texture=texture,
                      template_controls=ct, leaf_controls=cj,
                      leaf_frames_rot=rot, leaf_frames_t=t,
                      stem_mesh=stem, manifest=extra)
