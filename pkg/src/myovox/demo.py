"""Write a ready-to-run demo scene: python -m myovox.demo <dir>.

A 8x8x8 box domain with two bone slabs, two muscle curves anchored on
them, one render camera, and a scene config pointing at it all.
"""

import json
import sys
from pathlib import Path

import numpy as np

from . import primitives, tetmesh
from .curves import save_curve_network, MuscleCurve


def write_demo_scene(target_dir, n=8):
    out = Path(target_dir)
    out.mkdir(parents=True, exist_ok=True)

    mesh = primitives.box_grid(
        n, n, n, tag_skin=True,
        bone_tet_predicate=lambda c: c[0] < 1.0 / n or c[0] > 1.0 - 1.0 / n)
    tetmesh.save_tetmesh(mesh, out / "demo.node", out / "demo.ele",
                         out / "demo.tags.json")

    curves = [
        MuscleCurve(id=1,
                    control_points=np.array([[1.0 / n, 0.35, 0.5],
                                             [0.4, 0.3, 0.5],
                                             [0.6, 0.3, 0.5],
                                             [1.0 - 1.0 / n, 0.35, 0.5]]),
                    tissue_values=np.array([1.0, 1.4, 1.4, 1.0])),
        MuscleCurve(id=2,
                    control_points=np.array([[1.0 / n, 0.65, 0.5],
                                             [0.4, 0.72, 0.45],
                                             [0.6, 0.72, 0.55],
                                             [1.0 - 1.0 / n, 0.65, 0.5]]),
                    tissue_values=np.array([1.0, 1.2, 1.2, 1.0])),
    ]
    save_curve_network(out / "demo.curves.json", curves, d_fat=0.25)

    config = {
        "scene_name": "demo",
        "mesh": {"node": "demo.node", "ele": "demo.ele",
                 "tags": "demo.tags.json"},
        "curves": "demo.curves.json",
        "output_dir": "out",
        "solve": {"alpha": 5.0, "d_fat": 0.25},
        "fibers": {"alpha": 50.0, "endpoint_radius_frac": 0.12},
        "render": {
            "march_step": 0.1,
            "colors": {"1": [0.82, 0.18, 0.18], "2": [0.75, 0.3, 0.12]},
            "cameras": [{"eye": [0.5, 0.5, 3.0], "look_at": [0.5, 0.5, 0.5],
                         "up": [0, 1, 0], "fov": 32.0,
                         "width": 96, "height": 96}],
        },
    }
    with open(out / "demo.config.json", "w") as fh:
        json.dump(config, fh, indent=2)
        fh.write("\n")
    return out / "demo.config.json"


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "demo_scene"
    path = write_demo_scene(target)
    print(f"demo scene written; run: myovox solve --config {path}")
