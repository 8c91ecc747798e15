"""Scene configuration, field files, per-tissue exports, and the manifest.

All float payloads are serialized with 17 significant digits so repeated
runs are byte-identical and values round-trip exactly.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from .envelope import BONE_LABEL, FAT_LABEL
from .errors import ParseError
from .field_solver import TissueFieldSet

CONFIG_SCHEMA_PATH = Path(__file__).resolve().parent / "schemas" / "scene_config.schema.json"
MANIFEST_SCHEMA_PATH = Path(__file__).resolve().parent / "schemas" / "manifest.schema.json"


def _fmt(x):
    return format(float(x), ".17g")


def label_name(label):
    if label == BONE_LABEL:
        return "bone"
    if label == FAT_LABEL:
        return "fat"
    return f"muscle_{int(label)}"


# ----------------------------------------------------------------------
# scene config

DEFAULT_CONFIG = {
    "scene_name": "scene",
    "solve": {"alpha": 5.0, "d_fat": None, "exclude_open_boundary": False,
              "samples_per_span": 64},
    "eps": {"envelope_rel": 1e-6},
    "fibers": {"alpha": 50.0, "endpoint_radius": None,
               "endpoint_radius_frac": 0.025},
    "render": {"cameras": [], "colors": {}, "march_step": 0.1},
}


class SceneConfig:
    """Validated scene description; relative paths resolve against the file."""

    def __init__(self, data, base_dir=Path(".")):
        self.base_dir = Path(base_dir)
        self.data = _merge(DEFAULT_CONFIG, data)
        self.validate()

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(path, exc.lineno, f"bad config JSON: {exc.msg}") from exc
        return cls(data, base_dir=path.parent)

    def validate(self):
        import jsonschema
        with open(CONFIG_SCHEMA_PATH) as fh:
            schema = json.load(fh)
        jsonschema.validate(self.data, schema)

    def path(self, p):
        p = Path(p)
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def mesh_paths(self):
        m = self.data["mesh"]
        tags = self.path(m["tags"]) if m.get("tags") else None
        return self.path(m["node"]), self.path(m["ele"]), tags

    @property
    def curves_path(self):
        return self.path(self.data["curves"])

    @property
    def output_dir(self):
        return self.path(self.data.get("output_dir", "out"))

    @property
    def scene_name(self):
        return self.data.get("scene_name", "scene")


def _merge(defaults, data):
    out = {}
    for k, v in defaults.items():
        if isinstance(v, dict):
            out[k] = {**v, **data.get(k, {})}
        else:
            out[k] = data.get(k, v)
    for k, v in data.items():
        if k not in out:
            out[k] = v
    return out


# ----------------------------------------------------------------------
# field files

def write_fields(path, fields):
    """Deterministic JSON: tissue ids in order, one row of 17g floats each."""
    lines = ["{"]
    lines.append(f'  "tissue_ids": {json.dumps([int(i) for i in fields.tissue_ids])},')
    lines.append(f'  "alpha": {_fmt(fields.alpha)},')
    lines.append(f'  "d_fat": {_fmt(fields.d_fat)},')
    lines.append(f'  "n_vertices": {len(fields.fat_field)},')
    lines.append('  "values": [')
    mat = fields.values_matrix()
    for r, row in enumerate(mat):
        body = ", ".join(_fmt(x) for x in row)
        comma = "," if r + 1 < len(mat) else ""
        lines.append(f"    [{body}]{comma}")
    lines.append("  ]")
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_fields(path):
    with open(path) as fh:
        data = json.load(fh)
    ids = data["tissue_ids"]
    values = np.asarray(data["values"], dtype=np.float64)
    muscle_ids = [i for i in ids if i != FAT_LABEL]
    muscle_fields = {i: values[k] for k, i in enumerate(ids) if i != FAT_LABEL}
    fat = values[ids.index(FAT_LABEL)]
    return TissueFieldSet(muscle_ids=muscle_ids, muscle_fields=muscle_fields,
                          fat_field=fat, alpha=data.get("alpha", 5.0),
                          d_fat=data.get("d_fat", 0.0))


# ----------------------------------------------------------------------
# surface / fiber exports

def write_obj(path, surface):
    with open(path, "w") as fh:
        for v in surface.vertices:
            fh.write(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}\n")
        for t in surface.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def write_fiber_csv(path, mesh, fiber_field):
    with open(path, "w") as fh:
        fh.write("tet_id,cx,cy,cz,dx,dy,dz\n")
        cents = mesh.vertices[mesh.tets].mean(axis=1)
        for i in range(mesh.n_tets):
            c = cents[i]
            d = fiber_field.directions[i]
            fh.write(f"{i},{_fmt(c[0])},{_fmt(c[1])},{_fmt(c[2])},"
                     f"{_fmt(d[0])},{_fmt(d[1])},{_fmt(d[2])}\n")


# ----------------------------------------------------------------------
# manifest

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Per-output-directory ledger of artifacts and extraction statistics."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.path = self.out_dir / "manifest.json"
        self.data = {"entries": {}}
        if self.path.exists():
            with open(self.path) as fh:
                self.data = json.load(fh)

    def add_file(self, path):
        path = Path(path)
        rel = str(path.relative_to(self.out_dir))
        self.data.setdefault("entries", {})[rel] = {
            "sha256": sha256_file(path),
            "bytes": path.stat().st_size,
        }

    def set_extraction(self, labeled, eps_rel):
        vols = labeled.label_volumes()
        tissues = []
        for lab in sorted(vols):
            tissues.append({
                "id": int(lab),
                "label": label_name(lab),
                "volume": vols[lab],
                "tet_count": int((labeled.labels == lab).sum()),
            })
        self.data["extraction"] = {
            "total_volume": float(sum(vols.values())),
            "eps_rel": eps_rel,
            "tissues": tissues,
            "split_histogram": {str(k): v for k, v in
                                labeled.stats.get("histogram", {}).items()},
            "n_output_tets": int(labeled.n_tets),
        }

    def save(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def validate(self):
        import jsonschema
        with open(MANIFEST_SCHEMA_PATH) as fh:
            schema = json.load(fh)
        jsonschema.validate(self.data, schema)
