"""JSON forms of instances and component families.

Instance::

    {"dimension": int, "depth": int, "p": float, "r": float, "q": float,
     "sigma": [float...], "w": [float...],
     "cubes": [{"level": int, "index": [int...], "tau": float}...]}

Component family::

    {"components": [{"cube": {"level": int, "index": [...]}, "values": [float...]}...]}

where ``values`` lists the cells inside the cube in lexicographic order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dyadic import CubeId, DyadicGrid, Instance, StructureError, Weight
from .operators import ComponentFamily


def instance_to_json(inst: Instance) -> dict:
    return {
        "dimension": inst.grid.dimension,
        "depth": inst.grid.depth,
        "p": inst.p,
        "r": inst.r,
        "q": inst.q,
        "sigma": [float(v) for v in inst.sigma.values],
        "w": [float(v) for v in inst.w.values],
        "cubes": [{**c.to_json(), "tau": t} for c, t in inst.tau.items()],
    }


def instance_from_json(obj: dict) -> Instance:
    grid = DyadicGrid(int(obj["dimension"]), int(obj["depth"]))
    tau = {}
    for entry in obj["cubes"]:
        cube = CubeId.from_json(entry)
        if cube in tau:
            raise StructureError(f"duplicate cube {cube}")
        tau[cube] = float(entry["tau"])
    return Instance(grid, Weight(grid, obj["sigma"]), Weight(grid, obj["w"]),
                    float(obj["p"]), float(obj["r"]), float(obj["q"]), tau)


def dumps_instance(inst: Instance) -> str:
    return json.dumps(instance_to_json(inst), sort_keys=True)


def load_instance(path: str | Path) -> Instance:
    return instance_from_json(json.loads(Path(path).read_text()))


def family_to_json(fam: ComponentFamily) -> dict:
    grid = fam.instance.grid
    comps = []
    for cube, row in zip(fam.instance.collection, fam.values):
        cells = grid.cells(cube)
        comps.append({"cube": cube.to_json(), "values": [float(v) for v in row[cells]]})
    return {"components": comps}


def family_from_json(inst: Instance, obj: dict) -> ComponentFamily:
    grid = inst.grid
    rows = {c: i for i, c in enumerate(inst.collection)}
    arr = np.zeros((len(rows), inst.n_cells))
    for entry in obj["components"]:
        cube = CubeId.from_json(entry["cube"])
        if cube not in rows:
            raise StructureError(f"{cube} is not in the collection")
        cells = grid.cells(cube)
        vals = np.asarray(entry["values"], dtype=float)
        if vals.shape != (int(cells.sum()),):
            raise StructureError(f"component {cube} needs {int(cells.sum())} values")
        arr[rows[cube], cells] = vals
    return ComponentFamily(inst, arr)
