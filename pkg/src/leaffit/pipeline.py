"""End-to-end orchestration: PLY in, compact instanced asset out.

Stages run in order (segment, register, mesh, stem, export), each writing
inspectable artifacts under <out>/stages.  With ``resume`` enabled a stage
whose artifacts already exist is reloaded instead of recomputed, which makes
the CLI stage commands cheap to chain.  A stage failure aborts with the
stage name and a serialized partial state.

Per-leaf registration can fan out over threads (LEAFFIT_THREADS); results do
not depend on the schedule because each leaf's fit is independent and
deterministic.
"""

from __future__ import annotations

import json
import os
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .asset import PlantAsset, export_asset
from .config import PipelineConfig
from .errors import LeafFitError, ParameterError, StageError
from .meshing import (PlanarMap, TemplateMesh, TextureImage, bake_texture,
                      make_two_sided, read_obj, reconstruct_template,
                      write_obj)
from .registration import (ControlSet, LeafFrame, RegistrationResult,
                           denoise_mls, evaluate_mls, initial_correspondence,
                           loss_chamfer, optimize_controls, pca_align,
                           sample_controls)
from .segmentation import (PlantTree, Segmentation, segment_leaves)
from .splat_io import SplatCloud, load_splat_ply
from .stem import StemMesh, StemSpec, build_stem_mesh, write_stem_obj

STAGES = ("segment", "register", "mesh", "stem", "export")


def thread_budget() -> int:
    raw = os.environ.get("LEAFFIT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def resolve_root(cloud: SplatCloud, root) -> int:
    """Root as a primitive index or 'x,y,z' snapped to the nearest center."""
    if isinstance(root, (int, np.integer)):
        index = int(root)
    else:
        text = str(root)
        if "," in text:
            coords = np.asarray([float(v) for v in text.split(",")])
            if coords.shape != (3,):
                raise ParameterError("root coordinates must be x,y,z")
            return int(np.argmin(((cloud.centers - coords) ** 2).sum(axis=1)))
        index = int(text)
    if not 0 <= index < len(cloud):
        raise ParameterError(f"root index {index} out of range")
    return index


def resolve_template(segmentation: Segmentation, template) -> int:
    if isinstance(template, str) and template == "auto":
        sizes = [(leaf.member_indices.shape[0], -leaf.id)
                 for leaf in segmentation.leaves]
        return -max(sizes)[1]
    leaf_id = int(template)
    if leaf_id not in [leaf.id for leaf in segmentation.leaves]:
        raise ParameterError(f"template leaf id {leaf_id} does not exist")
    return leaf_id


@dataclass
class LeafGeometry:
    """Per-leaf denoised, aligned points plus the placement frame."""

    leaf_id: int
    aligned: np.ndarray
    frame: LeafFrame
    weights: np.ndarray


@dataclass
class LeafFit:
    leaf_id: int
    controls: ControlSet
    result: RegistrationResult
    vertex_chamfer: float = float("nan")


@dataclass
class PipelineRun:
    cloud: SplatCloud
    out_dir: Path
    segmentation: Optional[Segmentation] = None
    tree: Optional[PlantTree] = None
    artifacts: object = None
    leaves: List[LeafGeometry] = field(default_factory=list)
    template_id: int = -1
    template_controls: Optional[ControlSet] = None
    fits: List[LeafFit] = field(default_factory=list)
    mesh: Optional[TemplateMesh] = None
    texture: Optional[TextureImage] = None
    stem_mesh: Optional[StemMesh] = None
    asset: Optional[PlantAsset] = None


def prepare_leaf(cloud: SplatCloud, segmentation: Segmentation, leaf_id: int,
                 sigma: float) -> LeafGeometry:
    record = segmentation.leaves[leaf_id]
    members = record.member_indices
    points = cloud.centers[members]
    cleaned = denoise_mls(points, sigma=sigma)
    tip = cloud.centers[record.tip]
    aligned, frame = pca_align(cleaned, tip=tip)
    weights = np.full(aligned.shape[0],
                      float(np.median(cloud.opacities[members])))
    return LeafGeometry(leaf_id=leaf_id, aligned=aligned, frame=frame,
                        weights=weights)


def _fit_leaf(leaf: LeafGeometry, template: LeafGeometry,
              c_t: ControlSet, cfg: PipelineConfig) -> LeafFit:
    raw = sample_controls(leaf.aligned,
                          min(c_t.count, leaf.aligned.shape[0]))
    if raw.count != c_t.count:
        raise StageError("register",
                         f"leaf {leaf.leaf_id} has too few points for "
                         f"{c_t.count} controls")
    perm = initial_correspondence(c_t, raw)
    init = ControlSet(raw.positions[perm])
    result = optimize_controls(template.aligned, leaf.aligned, c_t, init,
                               cfg.registration,
                               template_weights=template.weights,
                               target_weights=leaf.weights)
    return LeafFit(leaf_id=leaf.leaf_id, controls=result.controls,
                   result=result)


def run_pipeline(input_ply, root, out_dir, template="auto",
                 cfg: Optional[PipelineConfig] = None,
                 stem_spec: Optional[StemSpec] = None,
                 write_reports: bool = True, stop_after: str = "export",
                 resume: bool = True) -> PipelineRun:
    """Execute stages up to ``stop_after``; export lands in out_dir/asset."""
    if stop_after not in STAGES:
        raise ParameterError(f"unknown stage '{stop_after}'")
    cfg = cfg or PipelineConfig()
    stem_spec = stem_spec or StemSpec(
        root_radius=cfg.stem.root_radius,
        petiole_radius=cfg.stem.petiole_radius, sides=cfg.stem.sides)
    out_dir = Path(out_dir)
    stages_dir = out_dir / "stages"
    stages_dir.mkdir(parents=True, exist_ok=True)

    def fail(stage: str, exc: Exception):
        state = {"stage": stage, "error": f"{type(exc).__name__}: {exc}",
                 "traceback": traceback.format_exc()}
        (out_dir / "partial_state.json").write_text(
            json.dumps(state, indent=1, default=str))
        if isinstance(exc, StageError):
            raise exc
        raise StageError(stage, str(exc)) from exc

    # --- segment ----------------------------------------------------------
    seg_path = stages_dir / "segmentation.json"
    tree_path = stages_dir / "tree.json"
    try:
        cloud = load_splat_ply(input_ply)
        root_index = resolve_root(cloud, root)
        run = PipelineRun(cloud=cloud, out_dir=out_dir)
        if resume and seg_path.exists() and tree_path.exists():
            run.segmentation = Segmentation.from_json(seg_path.read_text())
            run.tree = PlantTree.from_json(tree_path.read_text())
        else:
            run.segmentation, artifacts = segment_leaves(
                cloud, root_index, cfg.segmentation, return_artifacts=True)
            run.tree = artifacts.tree
            run.artifacts = artifacts
            seg_path.write_text(run.segmentation.to_json())
            tree_path.write_text(run.tree.to_json())
    except Exception as exc:  # noqa: BLE001 - stage boundary
        fail("segment", exc)
    if stop_after == "segment":
        return run

    # --- register ---------------------------------------------------------
    reg_path = stages_dir / "registration.json"
    sigma = cfg.registration.sigma
    try:
        run.leaves = [prepare_leaf(cloud, run.segmentation, leaf.id, sigma)
                      for leaf in run.segmentation.leaves]
        if resume and reg_path.exists():
            doc = json.loads(reg_path.read_text())
            run.template_id = int(doc["template_id"])
            run.template_controls = ControlSet(
                np.asarray(doc["template_controls"]))
            run.fits = []
            for item in doc["leaves"]:
                controls = ControlSet(np.asarray(item["controls"]))
                result = RegistrationResult(
                    controls=controls,
                    objective=item["objective_final"],
                    initial_objective=item["objective_initial"],
                    chamfer=item["chamfer_final"],
                    initial_chamfer=item["chamfer_initial"],
                    objective_history=[])
                run.fits.append(LeafFit(leaf_id=int(item["id"]),
                                        controls=controls, result=result))
        else:
            run.template_id = resolve_template(run.segmentation, template)
            template_leaf = run.leaves[run.template_id]
            run.template_controls = sample_controls(
                template_leaf.aligned, cfg.registration.control_count)
            workers = thread_budget()
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    run.fits = list(pool.map(
                        lambda leaf: _fit_leaf(leaf, template_leaf,
                                               run.template_controls, cfg),
                        run.leaves))
            else:
                run.fits = [_fit_leaf(leaf, template_leaf,
                                      run.template_controls, cfg)
                            for leaf in run.leaves]
            doc = {
                "template_id": run.template_id,
                "sigma": sigma,
                "control_count": run.template_controls.count,
                "template_controls":
                    run.template_controls.positions.tolist(),
                "leaves": [{
                    "id": fit.leaf_id,
                    "controls": fit.controls.positions.tolist(),
                    "frame_rotation":
                        run.leaves[fit.leaf_id].frame.rotation.tolist(),
                    "frame_translation":
                        run.leaves[fit.leaf_id].frame.translation.tolist(),
                    "chamfer_initial": fit.result.initial_chamfer,
                    "chamfer_final": fit.result.chamfer,
                    "objective_initial": fit.result.initial_objective,
                    "objective_final": fit.result.objective,
                } for fit in run.fits],
            }
            reg_path.write_text(json.dumps(doc))
    except Exception as exc:  # noqa: BLE001
        fail("register", exc)
    if stop_after == "register":
        return run

    # --- mesh ---------------------------------------------------------------
    mesh_obj = stages_dir / "template.obj"
    mesh_png = stages_dir / "template.png"
    mesh_meta = stages_dir / "mesh_meta.json"
    try:
        template_leaf = run.leaves[run.template_id]
        if resume and mesh_obj.exists() and mesh_png.exists() \
                and mesh_meta.exists():
            meta = json.loads(mesh_meta.read_text())
            verts, uvs, normals, faces = read_obj(mesh_obj)
            verts = verts.astype(np.float32).astype(np.float64)
            uvs = uvs.astype(np.float32).astype(np.float64)
            normals = normals.astype(np.float32).astype(np.float64)
            n_front = faces.shape[0] // 2
            side = np.concatenate([
                np.zeros(n_front, dtype=np.int8),
                np.ones(faces.shape[0] - n_front, dtype=np.int8)])
            run.mesh = TemplateMesh(
                vertices=verts, faces=faces, normals=normals, uvs=uvs,
                planar=PlanarMap(**meta["planar"]), two_sided=True,
                face_side=side,
                base_vertex_count=meta["base_vertex_count"])
            from PIL import Image
            run.texture = TextureImage(pixels=np.asarray(
                Image.open(mesh_png).convert("RGBA")))
        else:
            single = reconstruct_template(template_leaf.aligned,
                                          cfg.meshing.vertex_budget)
            run.mesh = make_two_sided(single)
            # canonicalize to float32 now so stage artifacts and the asset
            # agree byte for byte
            run.mesh.vertices = run.mesh.vertices.astype(
                np.float32).astype(np.float64)
            run.mesh.normals = run.mesh.normals.astype(
                np.float32).astype(np.float64)
            run.mesh.uvs = run.mesh.uvs.astype(np.float32).astype(np.float64)
            members = run.segmentation.leaves[run.template_id].member_indices
            leaf_pts = template_leaf.frame.to_local(cloud.centers[members])
            run.texture = bake_texture(
                leaf_pts, cloud.colors[members], cloud.opacities[members],
                run.mesh, cfg.meshing.atlas_width, cfg.meshing.atlas_height,
                cfg.meshing.dilation_px)
            write_obj(mesh_obj, run.mesh, texture_name="template.png",
                      object_name="template_leaf")
            from PIL import Image
            Image.fromarray(run.texture.pixels, mode="RGBA").save(mesh_png)
            mesh_meta.write_text(json.dumps({
                "planar": {"center_x": run.mesh.planar.center_x,
                           "center_y": run.mesh.planar.center_y,
                           "half_extent": run.mesh.planar.half_extent},
                "base_vertex_count": run.mesh.base_vertex_count}))
    except Exception as exc:  # noqa: BLE001
        fail("mesh", exc)
    if stop_after == "mesh":
        return run

    # --- stem ---------------------------------------------------------------
    stem_path = stages_dir / "stem.obj"
    try:
        run.stem_mesh = build_stem_mesh(run.tree, run.segmentation, stem_spec,
                                        cloud.centers)
        write_stem_obj(stem_path, run.stem_mesh)
    except Exception as exc:  # noqa: BLE001
        fail("stem", exc)
    if stop_after == "stem":
        return run

    # --- export -------------------------------------------------------------
    try:
        reg_doc = json.loads(reg_path.read_text())
        manifest = {
            "root_index": root_index,
            "template_id": run.template_id,
            "sigma": sigma,
            "config": cfg.to_dict(),
            "stem_spec": {"root_radius": stem_spec.root_radius,
                          "petiole_radius": stem_spec.petiole_radius,
                          "sides": stem_spec.sides},
            # metrics only: the control and frame arrays live in controls.bin
            "leaves": [{key: value for key, value in item.items()
                        if key not in ("controls", "frame_rotation",
                                       "frame_translation")}
                       for item in reg_doc["leaves"]],
        }
        asset = PlantAsset.build(
            mesh=run.mesh, texture=run.texture, c_t=run.template_controls,
            leaf_controls=[fit.controls for fit in run.fits],
            frames=[leaf.frame for leaf in run.leaves],
            stem=run.stem_mesh, manifest=manifest)
        # evaluator-consistency metric: Chamfer of the deformed template
        # vertices (exactly as the asset stores them) to the leaf points
        for fit in run.fits:
            verts = evaluate_mls(
                asset.template_controls.astype(np.float64),
                asset.leaf_controls[fit.leaf_id].astype(np.float64),
                asset.template_mesh.vertices, sigma)
            fit.vertex_chamfer = loss_chamfer(
                verts, run.leaves[fit.leaf_id].aligned)
            manifest["leaves"][fit.leaf_id]["vertex_chamfer"] = \
                fit.vertex_chamfer
        asset.manifest = manifest
        export_asset(asset, out_dir / "asset")
        run.asset = asset
    except Exception as exc:  # noqa: BLE001
        fail("export", exc)

    if write_reports:
        try:
            from .report import write_run_reports
            write_run_reports(run)
        except Exception as exc:  # noqa: BLE001 - reports must not kill runs
            (out_dir / "report_error.txt").write_text(str(exc))
    return run
