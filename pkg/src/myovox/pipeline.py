"""Scene orchestration shared by the CLI and the session service:
load, solve, extract, fibers, render, manifest."""

import sys
import time
from pathlib import Path

import numpy as np

from . import curves as curves_mod
from . import envelope, fibers as fibers_mod, raycast, sceneio, tetmesh
from .field_solver import SolveParams, TissueSolver


def log(msg):
    print(msg, file=sys.stderr)


def load_scene(config):
    node, ele, tags = config.mesh_paths
    mesh = tetmesh.load_tetmesh(node, ele, tags)
    curve_list, d_fat_file = curves_mod.load_curve_network(config.curves_path)
    solve_cfg = config.data["solve"]
    d_fat = solve_cfg.get("d_fat")
    if d_fat is None:
        d_fat = d_fat_file
    params = SolveParams(
        alpha=solve_cfg["alpha"],
        d_fat=d_fat,
        exclude_open_boundary=solve_cfg["exclude_open_boundary"],
        samples_per_span=solve_cfg["samples_per_span"],
    )
    return mesh, curve_list, params


def run_solve(config, write=True):
    t0 = time.perf_counter()
    full, curve_list, params = load_scene(config)
    reduced = tetmesh.remove_bone_tets(full)
    solver = TissueSolver(reduced, curve_list, params)
    fields = solver.solve_all(parallel=True)
    log(f"solve: {len(curve_list)} muscles + fat on {reduced.n_tets} tets "
        f"in {time.perf_counter() - t0:.3f}s")
    if write:
        out = config.output_dir
        out.mkdir(parents=True, exist_ok=True)
        fpath = out / f"{config.scene_name}_fields.json"
        sceneio.write_fields(fpath, fields)
        manifest = sceneio.Manifest(out)
        manifest.add_file(fpath)
        manifest.save()
    return full, reduced, curve_list, fields


def _load_or_solve(config):
    fpath = config.output_dir / f"{config.scene_name}_fields.json"
    full, curve_list, params = load_scene(config)
    reduced = tetmesh.remove_bone_tets(full)
    if fpath.exists():
        fields = sceneio.read_fields(fpath)
        log(f"fields loaded from {fpath}")
        return full, reduced, curve_list, fields
    solver = TissueSolver(reduced, curve_list, params)
    return full, reduced, curve_list, solver.solve_all(parallel=True)


def run_extract(config):
    t0 = time.perf_counter()
    full, reduced, curve_list, fields = _load_or_solve(config)
    eps_rel = config.data["eps"]["envelope_rel"]
    labeled = envelope.maximization_diagram(
        reduced, fields, eps_rel=eps_rel,
        original_mesh=full if full.bone_tet_ids.size else None)

    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    manifest = sceneio.Manifest(out)
    meshes = {}
    for lab in sorted(set(labeled.labels.tolist())):
        name = sceneio.label_name(lab)
        sub = envelope.extract_tissue_mesh(labeled, lab)
        meshes[lab] = sub
        stem = out / f"{config.scene_name}_{name}"
        tetmesh.save_tetmesh(sub, f"{stem}.node", f"{stem}.ele")
        surf = envelope.extract_boundary_surface(sub)
        sceneio.write_obj(f"{stem}.obj", surf)
        for ext in (".node", ".ele", ".obj"):
            manifest.add_file(f"{stem}{ext}")
    manifest.set_extraction(labeled, eps_rel)
    manifest.save()
    log(f"extract: {labeled.n_tets} labeled tets in {time.perf_counter() - t0:.3f}s")
    return labeled, meshes, manifest


def run_fibers(config, labeled=None, meshes=None):
    t0 = time.perf_counter()
    full, reduced, curve_list, fields = _load_or_solve(config)
    if labeled is None:
        eps_rel = config.data["eps"]["envelope_rel"]
        labeled = envelope.maximization_diagram(
            reduced, fields, eps_rel=eps_rel,
            original_mesh=full if full.bone_tet_ids.size else None)
    fib_cfg = config.data["fibers"]
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    manifest = sceneio.Manifest(out)
    results = {}
    for curve in curve_list:
        sub = (meshes or {}).get(curve.id)
        if sub is None:
            sub = envelope.extract_tissue_mesh(labeled, curve.id)
        if sub.n_tets == 0:
            log(f"fibers: muscle {curve.id} extracted empty, skipped")
            continue
        radius = fib_cfg.get("endpoint_radius")
        if radius is None:
            radius = fib_cfg["endpoint_radius_frac"] * sub.bbox_diagonal
        ff = fibers_mod.solve_fiber_field(sub, curve, alpha=fib_cfg["alpha"],
                                          endpoint_radius=radius)
        path = out / f"{config.scene_name}_fibers_{curve.id}.csv"
        sceneio.write_fiber_csv(path, sub, ff)
        manifest.add_file(path)
        results[curve.id] = (sub, ff)
    manifest.save()
    log(f"fibers: {len(results)} muscles in {time.perf_counter() - t0:.3f}s")
    return results


def run_render(config):
    t0 = time.perf_counter()
    full, reduced, curve_list, fields = _load_or_solve(config)
    rcfg = config.data["render"]
    colors = _parse_colors(rcfg.get("colors", {}))
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    manifest = sceneio.Manifest(out)
    images = []
    for i, cam_dict in enumerate(rcfg["cameras"]):
        cam = raycast.Camera.from_dict(cam_dict)
        img = raycast.render_image(full, fields, cam, colors=colors,
                                   march_step=rcfg["march_step"],
                                   reduced_mesh=reduced)
        ppm = out / f"{config.scene_name}_render_{i}.ppm"
        raycast.write_ppm(ppm, img)
        manifest.add_file(ppm)
        try:
            png = out / f"{config.scene_name}_render_{i}.png"
            raycast.write_png(png, img)
            manifest.add_file(png)
        except ImportError:
            pass
        images.append(img)
    manifest.save()
    log(f"render: {len(images)} cameras in {time.perf_counter() - t0:.3f}s")
    return images


def _parse_colors(raw):
    colors = {}
    for key, rgb in raw.items():
        try:
            key = int(key)
        except (ValueError, TypeError):
            pass
        colors[key] = tuple(float(c) for c in rgb)
    return colors
