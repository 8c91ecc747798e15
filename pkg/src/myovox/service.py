"""Local HTTP session service for the studio UI.

Owns live modelling sessions: the mesh, the curve network, and the solved
per-vertex tissue fields. Curve edits re-solve synchronously under a
per-session lock (edits are serialized), bump the revision, and notify
the event stream. Field buffers stream as little-endian f32 with a tissue
id header; meshing happens only at finalize.
"""

import json
import queue
import struct
import threading
import time
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, Response, StreamingResponse

from . import curves as curves_mod
from . import pipeline, sceneio, tetmesh
from .curves import MuscleCurve, bone_surface_triangles, fit_spline, project_sketch
from .errors import MyovoxError, SketchError, SolverError, StructuralError
from .field_solver import SolveParams, TissueSolver
from .raycast import Camera

SNAP_TOLERANCE_FRACTION = 1e-4  # of the bounding-box diagonal


def pack_fields(fields):
    """u32 tissue count, i32 tissue ids, then per-tissue f32 vertex values."""
    ids = fields.tissue_ids
    buf = bytearray(struct.pack("<I", len(ids)))
    buf += struct.pack(f"<{len(ids)}i", *[int(i) for i in ids])
    mat = fields.values_matrix().astype("<f4")
    buf += mat.tobytes()
    return bytes(buf)


class Session:
    def __init__(self, sid, full_mesh, journal_path=None, mesh_record=None):
        self.id = sid
        self.full = full_mesh
        self.reduced = tetmesh.remove_bone_tets(full_mesh)
        self.curves = {}
        self.params = SolveParams()
        self.solver = None
        self.fields = None
        self.revision = 0
        self.lock = threading.Lock()
        self.subscribers = []
        self.journal_path = Path(journal_path) if journal_path else None
        if self.journal_path and mesh_record is not None:
            self._journal({"op": "create", "mesh": mesh_record})

    # -- journal -------------------------------------------------------

    def _journal(self, record):
        if self.journal_path is None:
            return
        with open(self.journal_path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    # -- events --------------------------------------------------------

    def subscribe(self):
        q = queue.Queue(maxsize=64)
        self.subscribers.append(q)
        return q

    def _emit(self, event):
        for q in list(self.subscribers):
            try:
                q.put_nowait(event)
            except queue.Full:
                pass

    # -- solving -------------------------------------------------------

    def _resolve_all(self, dirty_ids):
        t0 = time.perf_counter()
        if self.curves:
            self.solver = TissueSolver(self.reduced, list(self.curves.values()),
                                       self.params)
        else:
            self.solver = TissueSolver(self.reduced, [], self.params)
        self.fields = self.solver.solve_all()
        self._bump(dirty_ids, time.perf_counter() - t0)

    def _bump(self, dirty_ids, seconds):
        self.revision += 1
        self._emit({
            "revision": self.revision,
            "timings": {"solve_s": round(seconds, 6)},
            "dirty": {str(cid): True for cid in dirty_ids},
        })

    def upsert_curve(self, curve):
        with self.lock:
            old = self.curves.get(curve.id)
            self.curves[curve.id] = curve
            self._journal({"op": "upsert", "curve": curve.to_dict()})
            values_only = (
                old is not None and self.solver is not None
                and np.array_equal(old.control_points, curve.control_points)
                and old.twist_angle == curve.twist_angle
                and old.eigenvalues == curve.eigenvalues
                and not np.array_equal(old.tissue_values, curve.tissue_values)
            )
            if values_only:
                t0 = time.perf_counter()
                f = self.solver.update_tissue_values(curve.id, curve.tissue_values)
                self.fields.muscle_fields[curve.id] = f
                self._bump([curve.id], time.perf_counter() - t0)
            else:
                self._resolve_all([curve.id])
            return self.revision

    def delete_curve(self, cid):
        with self.lock:
            if cid not in self.curves:
                raise KeyError(cid)
            del self.curves[cid]
            self._journal({"op": "delete", "id": int(cid)})
            self._resolve_all([cid])
            return self.revision

    def ensure_fields(self):
        with self.lock:
            if self.fields is None:
                self._resolve_all([])
            return self.fields

    # -- validation ----------------------------------------------------

    def validate_anchoring(self, curve):
        tris = bone_surface_triangles(self.full)
        if not len(tris):
            return  # no bone in the scene: nothing to snap to
        tol = SNAP_TOLERANCE_FRACTION * self.full.bbox_diagonal
        pts = self.full.vertices[tris]
        for p in (curve.control_points[0], curve.control_points[-1]):
            if _point_tris_distance(np.asarray(p, float), pts) > tol:
                raise SketchError("stroke must start and end on bone")


def _point_tris_distance(p, tri_pts):
    best = np.inf
    for tri in tri_pts:
        best = min(best, _point_tri_distance(p, tri))
        if best == 0.0:
            break
    return best


def _point_tri_distance(p, tri):
    a, b, c = tri
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    d3, d4 = ab @ (p - b), ac @ (p - b)
    d5, d6 = ab @ (p - c), ac @ (p - c)
    if d1 <= 0 and d2 <= 0:
        return float(np.linalg.norm(p - a))
    if d3 >= 0 and d4 <= d3:
        return float(np.linalg.norm(p - b))
    if d6 >= 0 and d5 <= d6:
        return float(np.linalg.norm(p - c))
    vc = d1 * d4 - d3 * d2
    if vc <= 0 <= d1 and d3 <= 0:
        t = d1 / (d1 - d3)
        return float(np.linalg.norm(p - (a + t * ab)))
    vb = d5 * d2 - d1 * d6
    if vb <= 0 <= d2 and d6 <= 0:
        t = d2 / (d2 - d6)
        return float(np.linalg.norm(p - (a + t * ac)))
    va = d3 * d6 - d5 * d4
    if va <= 0 and d4 - d3 >= 0 and d5 - d6 >= 0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return float(np.linalg.norm(p - (b + t * (c - b))))
    n = np.cross(ab, ac)
    n = n / np.linalg.norm(n)
    return float(abs(ap @ n))


# ----------------------------------------------------------------------
# journal replay

def replay_journal(journal_path):
    """Rebuild a session from its journal; state must match the original."""
    session = None
    with open(journal_path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["op"] == "create":
                mesh = _mesh_from_record(rec["mesh"])
                session = Session("replay", mesh)
            elif rec["op"] == "upsert":
                session.upsert_curve(MuscleCurve.from_dict(rec["curve"]))
            elif rec["op"] == "delete":
                session.delete_curve(int(rec["id"]))
    if session is not None:
        session.ensure_fields()
    return session


def _mesh_from_record(record):
    if "paths" in record:
        p = record["paths"]
        return tetmesh.load_tetmesh(p["node"], p["ele"], p.get("tags"))
    inline = record["inline"]
    import tempfile
    with tempfile.TemporaryDirectory() as td:
        td = Path(td)
        (td / "m.node").write_text(inline["node"])
        (td / "m.ele").write_text(inline["ele"])
        tags = None
        if inline.get("tags") is not None:
            (td / "m.tags.json").write_text(json.dumps(inline["tags"]))
            tags = td / "m.tags.json"
        return tetmesh.load_tetmesh(td / "m.node", td / "m.ele", tags)


# ----------------------------------------------------------------------
# app

def build_app(config=None, ui_dir=None, journal_dir=None, output_dir=None):
    app = FastAPI(title="myovox session service")
    sessions = {}
    journal_dir = Path(journal_dir) if journal_dir else None
    output_dir = Path(output_dir) if output_dir else None
    if config is not None:
        output_dir = output_dir or (config.output_dir / "sessions")
        journal_dir = journal_dir or (config.output_dir / "journals")
    state = {"config": config}

    def get_session(sid):
        s = sessions.get(sid)
        if s is None:
            raise HTTPException(404, f"unknown session {sid}")
        return s

    @app.get("/health")
    def health():
        return {"status": "ok", "sessions": len(sessions)}

    @app.post("/sessions")
    def create_session(body: dict):
        try:
            if "mesh_paths" in body:
                p = body["mesh_paths"]
                mesh = tetmesh.load_tetmesh(p["node"], p["ele"], p.get("tags"))
                record = {"paths": {"node": str(p["node"]), "ele": str(p["ele"]),
                                    "tags": str(p["tags"]) if p.get("tags") else None}}
            elif "mesh_inline" in body:
                record = {"inline": body["mesh_inline"]}
                mesh = _mesh_from_record(record)
            elif state["config"] is not None:
                node, ele, tags = state["config"].mesh_paths
                mesh = tetmesh.load_tetmesh(node, ele, tags)
                record = {"paths": {"node": str(node), "ele": str(ele),
                                    "tags": str(tags) if tags else None}}
            else:
                raise HTTPException(422, "no mesh given and no configured scene")
        except HTTPException:
            raise
        except MyovoxError as exc:
            raise HTTPException(422, f"invalid mesh: {exc}") from exc

        sid = uuid.uuid4().hex[:12]
        jpath = None
        if journal_dir is not None:
            journal_dir.mkdir(parents=True, exist_ok=True)
            jpath = journal_dir / f"{sid}.journal.jsonl"
        session = Session(sid, mesh, journal_path=jpath, mesh_record=record)
        if config is not None:
            scfg = config.data["solve"]
            session.params = SolveParams(
                alpha=scfg["alpha"], d_fat=scfg.get("d_fat"),
                exclude_open_boundary=scfg["exclude_open_boundary"],
                samples_per_span=scfg["samples_per_span"])
        sessions[sid] = session
        skin = [mesh.face_vertices(t, k) for t, k in mesh.boundary_faces()]
        bone = bone_surface_triangles(mesh).tolist()
        return {
            "session_id": sid,
            "summary": {
                "n_vertices": mesh.n_vertices,
                "n_tets": mesh.n_tets,
                "n_bone_tets": int(mesh.bone_tet_ids.size),
                "bounds": [mesh.bbox[0].tolist(), mesh.bbox[1].tolist()],
                "skin_triangles": skin,
                "bone_triangles": bone,
            },
        }

    @app.get("/sessions/{sid}/mesh")
    def get_mesh(sid: str):
        s = get_session(sid)
        r = s.reduced
        return {
            "vertices": r.vertices.tolist(),
            "tets": r.tets.tolist(),
            "skin_vertices": np.nonzero(r.skin_mask)[0].tolist(),
            "bone_triangles": bone_surface_triangles(s.full).tolist(),
            "full_vertices": s.full.vertices.tolist(),
        }

    @app.post("/sessions/{sid}/curves")
    def upsert_curve(sid: str, body: dict):
        s = get_session(sid)
        try:
            if "stroke" in body:
                stroke = body["stroke"]
                cam = Camera.from_dict(stroke["camera"])
                pts3d = project_sketch(s.full, stroke["points_2d"], cam)
                k = int(stroke.get("control_count", 4))
                if len(pts3d) < k:
                    t = np.linspace(0, 1, k)[:, None]
                    pts3d = pts3d[0] * (1 - t) + pts3d[-1] * t
                ctrl = fit_spline(pts3d, k=k)
                cid = int(body.get("id", stroke.get("id", _next_id(s))))
                values = body.get("tissue_values") or [1.0] * len(ctrl)
                curve = MuscleCurve(
                    id=cid, control_points=ctrl,
                    tissue_values=np.asarray(values, dtype=np.float64),
                    twist_angle=float(body.get("twist_angle", 0.0)),
                    eigenvalues=tuple(body.get("eigenvalues", (1.0, 1.0, 1.0))))
            else:
                curve = MuscleCurve.from_dict(body)
            s.validate_anchoring(curve)
            rev = s.upsert_curve(curve)
        except SketchError as exc:
            raise HTTPException(409, str(exc)) from exc
        except (SolverError, StructuralError) as exc:
            raise HTTPException(500, str(exc)) from exc
        except MyovoxError as exc:
            raise HTTPException(422, str(exc)) from exc
        except (KeyError, ValueError) as exc:
            raise HTTPException(422, f"bad curve payload: {exc}") from exc
        return {"revision": rev, "tissue_ids": s.fields.tissue_ids}

    @app.delete("/sessions/{sid}/curves/{cid}")
    def delete_curve(sid: str, cid: int):
        s = get_session(sid)
        try:
            rev = s.delete_curve(cid)
        except KeyError:
            raise HTTPException(404, f"no curve {cid}") from None
        return {"revision": rev, "tissue_ids": s.fields.tissue_ids}

    @app.get("/sessions/{sid}/fields")
    def get_fields(sid: str, rev: int | None = None):
        s = get_session(sid)
        with s.lock:
            if s.fields is None:
                s._resolve_all([])
            if rev is not None and rev != s.revision:
                return JSONResponse(
                    status_code=410,
                    content={"error": "stale revision", "revision": s.revision})
            payload = pack_fields(s.fields)
            revision = s.revision
        return Response(content=payload,
                        media_type="application/octet-stream",
                        headers={"X-Revision": str(revision)})

    @app.get("/sessions/{sid}/events")
    def stream_events(sid: str, request: Request):
        s = get_session(sid)
        q = s.subscribe()

        def gen():
            snapshot = {"revision": s.revision, "timings": {}, "dirty": {}}
            yield f"data: {json.dumps(snapshot, sort_keys=True)}\n\n"
            try:
                while True:
                    try:
                        ev = q.get(timeout=15.0)
                        yield f"data: {json.dumps(ev, sort_keys=True)}\n\n"
                    except queue.Empty:
                        yield ": keepalive\n\n"
            finally:
                if q in s.subscribers:
                    s.subscribers.remove(q)

        return StreamingResponse(gen(), media_type="text/event-stream")

    @app.post("/sessions/{sid}/finalize")
    def finalize(sid: str):
        s = get_session(sid)
        if not s.curves:
            raise HTTPException(409, "no curves to finalize")
        with s.lock:
            out = (output_dir or Path("sessions_out")) / sid
            manifest = finalize_session(s, out)
        return manifest.data

    if ui_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="studio")

    app.state.sessions = sessions
    return app


def _next_id(session):
    return max(session.curves.keys(), default=0) + 1


def finalize_session(session, out_dir, scene_name="session"):
    """Export the session as a scene and run batch extraction + fibers."""
    out_dir = Path(out_dir)
    scene_dir = out_dir / "scene"
    scene_dir.mkdir(parents=True, exist_ok=True)
    tetmesh.save_tetmesh(session.full, scene_dir / "m.node", scene_dir / "m.ele",
                         scene_dir / "m.tags.json")
    curves_mod.save_curve_network(scene_dir / "curves.json",
                                  list(session.curves.values()),
                                  d_fat=session.params.d_fat)
    cfg_data = {
        "scene_name": scene_name,
        "mesh": {"node": "m.node", "ele": "m.ele", "tags": "m.tags.json"},
        "curves": "curves.json",
        "output_dir": str(out_dir / "artifacts"),
        "solve": {
            "alpha": session.params.alpha,
            "d_fat": session.params.d_fat,
            "exclude_open_boundary": session.params.exclude_open_boundary,
            "samples_per_span": session.params.samples_per_span,
        },
        "fibers": {"endpoint_radius_frac": 0.12},
    }
    with open(scene_dir / "config.json", "w") as fh:
        json.dump(cfg_data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    config = sceneio.SceneConfig.load(scene_dir / "config.json")
    pipeline.run_solve(config)
    labeled, meshes, manifest = pipeline.run_extract(config)
    pipeline.run_fibers(config, labeled=labeled, meshes=meshes)
    return sceneio.Manifest(config.output_dir)
