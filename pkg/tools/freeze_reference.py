"""Compute the fine-grid reference values frozen in tests/data/reference.json.

Run from the repository root:  python tools/freeze_reference.py
The n=512 cell solves take a few minutes; the test suite only reads the
resulting JSON file.
"""
import json
import sys
import time
from pathlib import Path

import numpy as np

from poroscale.cells import diffusion_tensor, permeability_tensor, solve_diffusion_cell, solve_stokes_cell
from poroscale.geometry import UnitCellGrid, circle_levelset

OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "reference.json"


def main(n_fine: int = 512) -> None:
    ref = {"radius": 0.3, "n_fine": n_fine}
    phi = circle_levelset(0.3, UnitCellGrid(n_fine))
    t0 = time.perf_counter()
    D = diffusion_tensor(solve_diffusion_cell(phi), phi).m
    ref["D_fine"] = float(0.5 * (D[0, 0] + D[1, 1]))
    print(f"D at n={n_fine}: {D.tolist()} ({time.perf_counter() - t0:.1f} s)", flush=True)
    t0 = time.perf_counter()
    K = permeability_tensor(solve_stokes_cell(phi), phi).m
    ref["K_fine"] = float(0.5 * (K[0, 0] + K[1, 1]))
    print(f"K at n={n_fine}: {K.tolist()} ({time.perf_counter() - t0:.1f} s)", flush=True)
    phi = circle_levelset(0.3, UnitCellGrid(128))
    sol = solve_diffusion_cell(phi)
    ref["diffusion_iterations_n128"] = [int(k) for k in sol.iterations]
    D128 = diffusion_tensor(sol, phi).m
    K128 = permeability_tensor(solve_stokes_cell(phi), phi).m
    ref["D_n128"] = float(D128[0, 0])
    ref["K_n128"] = float(K128[0, 0])
    OUT.write_text(json.dumps(ref, indent=2, sort_keys=True) + "\n")
    print(json.dumps(ref, indent=2, sort_keys=True))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 512)
