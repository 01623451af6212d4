"""Grid sweeps: tolerance maps, basin rasters and preconditioning curves.

Cells are independent, so sweeps fan out over a process pool when the
TOLERANCEKIT_THREADS environment variable asks for more than one worker.
Results are assembled by cell index, so the output does not depend on the
order in which workers finish.
"""

from __future__ import annotations

import csv
import json
import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import PreconditionError, ToleranceKitError
from .geometry import CandidateClassifier
from .integrate import IntegrationOptions, basin_status, integrate
from .system import PlanarSystem, find_fixed_points, node_report
from .tolerance import detect_tolerance

Point = tuple[float, float]

THREADS_ENV = "TOLERANCEKIT_THREADS"


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid resolution must be at least 2x2")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("grid box must have positive width and height")

    def centers(self) -> list[tuple[int, int, float, float]]:
        dx = (self.x_max - self.x_min) / self.nx
        dy = (self.y_max - self.y_min) / self.ny
        return [
            (i, j, self.x_min + (i + 0.5) * dx, self.y_min + (j + 0.5) * dy)
            for j in range(self.ny)
            for i in range(self.nx)
        ]


# ---------------------------------------------------------------- tolerance maps


@dataclass
class Cell:
    i: int
    j: int
    x: float
    y: float
    status: str = "evaluated"  # evaluated | skipped-A3 | outside-basin | error
    prediction: str = ""
    license: str | None = None
    outcome: str = ""
    onset: float = -1.0
    margin: float = math.nan
    message: str = ""


@dataclass
class ToleranceMap:
    system: str
    r0: Point
    grid: Grid
    cells: list[Cell]
    summary: dict = field(default_factory=dict)

    @property
    def sound(self) -> bool:
        return not self.summary.get("violations")

    def cell_at(self, x: float, y: float) -> Cell:
        """The cell whose box contains (x, y)."""
        g = self.grid
        i = min(g.nx - 1, max(0, int((x - g.x_min) / (g.x_max - g.x_min) * g.nx)))
        j = min(g.ny - 1, max(0, int((y - g.y_min) / (g.y_max - g.y_min) * g.ny)))
        return self.cells[j * g.nx + i]

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "r0": list(self.r0),
            "grid": asdict(self.grid),
            "summary": self.summary,
            "cells": [_cell_dict(c) for c in self.cells],
        }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "prediction", "outcome", "onset", "margin"])
            for c in self.cells:
                w.writerow([repr(c.x), repr(c.y), c.prediction or c.status, c.outcome or c.status, repr(c.onset), repr(c.margin)])

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, allow_nan=False, default=str) + "\n")


def _cell_dict(c: Cell) -> dict:
    d = asdict(c)
    if math.isnan(d["margin"]):
        d["margin"] = None
    elif math.isinf(d["margin"]):
        d["margin"] = "inf"
    return d


def summarize(cells: Sequence[Cell]) -> dict:
    status = Counter(c.status for c in cells)
    outcomes = Counter(c.outcome for c in cells if c.status == "evaluated")
    confusion: dict[str, dict[str, int]] = {}
    violations = []
    for c in cells:
        if c.status != "evaluated":
            continue
        row = confusion.setdefault(c.prediction, {})
        row[c.outcome] = row.get(c.outcome, 0) + 1
        if c.prediction == "Guaranteed" and c.outcome == "NoTolerance":
            violations.append([c.x, c.y, c.prediction, c.outcome])
        if c.prediction == "Impossible" and c.outcome == "Tolerance":
            violations.append([c.x, c.y, c.prediction, c.outcome])
    return {
        "cells": len(cells),
        "status": dict(sorted(status.items())),
        "outcomes": dict(sorted(outcomes.items())),
        "confusion": confusion,
        "violations": violations,
    }


# state for worker processes, built once per process
_STATE: dict = {}


def _init_worker(sys, r0, opts, other_attractors, predict):
    _STATE.clear()
    _STATE.update(sys=sys, r0=r0, opts=opts, others=tuple(other_attractors), predict=predict)
    _STATE["classifier"] = None
    if predict:
        _STATE["classifier"] = CandidateClassifier(sys, r0, opts, other_attractors=other_attractors)


def _eval_cell(task: tuple[int, int, float, float]) -> Cell:
    i, j, x, y = task
    sys, r0, opts = _STATE["sys"], _STATE["r0"], _STATE["opts"]
    cell = Cell(i, j, x, y)
    if x < r0[0]:
        cell.status = "skipped-A3"
        return cell
    node = opts.node or (0.0, 0.0)
    try:
        where = basin_status(sys, (x, y), node, opts, _STATE["others"])
    except ToleranceKitError as exc:
        cell.status, cell.message = "error", str(exc)
        return cell
    if where != "inside":
        cell.status = "outside-basin"
        cell.message = where
        return cell
    try:
        if _STATE["classifier"] is not None:
            pred = _STATE["classifier"].classify((x, y))
            cell.prediction, cell.license = pred.kind, pred.license
        v = detect_tolerance(sys, r0, (x, y), opts)
    except ToleranceKitError as exc:
        cell.status, cell.message = "error", str(exc)
        return cell
    cell.outcome = v.outcome
    cell.margin = v.margin
    if v.is_tolerance:
        cell.onset = v.t1
    return cell


def _run(tasks, workers, init_args, fn):
    if workers <= 1 or len(tasks) < 2:
        _init_worker(*init_args)
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (workers * 8))
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=init_args) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


def scan_points(
    sys: PlanarSystem,
    r0: Point,
    points: Sequence[Point],
    opts: IntegrationOptions | None = None,
    other_attractors: Sequence[Point] = (),
    predict: bool = True,
    workers: int | None = None,
) -> list[Cell]:
    opts = opts or IntegrationOptions()
    r0 = (float(r0[0]), float(r0[1]))
    tasks = [(k, 0, float(p[0]), float(p[1])) for k, p in enumerate(points)]
    return _run(tasks, worker_count(workers), (sys, r0, opts, tuple(other_attractors), predict), _eval_cell)


def scan_grid(
    sys: PlanarSystem,
    r0: Point,
    grid: Grid,
    opts: IntegrationOptions | None = None,
    other_attractors: Sequence[Point] = (),
    predict: bool = True,
    workers: int | None = None,
) -> ToleranceMap:
    """Classify and simulate every cell center of ``grid``."""
    opts = opts or IntegrationOptions()
    node = opts.node or (0.0, 0.0)
    if not node_report(sys, node).satisfies_A1:
        raise PreconditionError("A1", f"{node} is not a stable node with real negative eigenvalues")
    r0 = (float(r0[0]), float(r0[1]))
    tasks = grid.centers()
    # reference-dependent work is pointless when every cell is left of x_r
    predict = predict and any(t[2] >= r0[0] for t in tasks)
    cells = _run(tasks, worker_count(workers), (sys, r0, opts, tuple(other_attractors), predict), _eval_cell)
    return ToleranceMap(sys.name, r0, grid, cells, summarize(cells))


# ---------------------------------------------------------------- preconditioning


def preconditioning_curve(
    sys: PlanarSystem,
    rho0: Point,
    offset: Point,
    s_values: Sequence[float],
    r0: Point | None = None,
    opts: IntegrationOptions | None = None,
) -> list[Point]:
    """Candidate perturbed starts rho(s) + offset, with rho the orbit from rho0."""
    opts = opts or IntegrationOptions()
    if offset[0] < 0 or offset[1] < 0:
        raise ValueError(f"offset must be nonnegative, got {offset}")
    if r0 is not None and not (0 < rho0[0] <= r0[0] and 0 <= rho0[1] <= r0[1]):
        raise ValueError(f"rho0 = {rho0} must satisfy 0 < x <= x_r and 0 <= y <= y_r for r0 = {r0}")
    if any(s < 0 for s in s_values):
        raise ValueError("s values must be nonnegative")
    s_max = max(s_values, default=0.0)
    if s_max > opts.horizon:
        raise ValueError(f"s = {s_max} is beyond the integration horizon {opts.horizon}")
    out = []
    traj = None
    if s_max > 0:
        traj = integrate(sys, rho0, opts.with_(node=None, horizon=s_max, events=()))
        if traj.t_end < s_max:
            raise ValueError(f"the orbit from {rho0} stops at t = {traj.t_end:.6g} ({traj.termination})")
    for s in s_values:
        px, py = (float(rho0[0]), float(rho0[1])) if s == 0 else traj.at(float(s))
        out.append((px + offset[0], py + offset[1]))
    return out


# ---------------------------------------------------------------- basins


@dataclass(frozen=True)
class BasinRaster:
    fixed_point: Point
    grid: Grid
    inside: np.ndarray  # (ny, nx) bool, row j = y index
    undecided: int = 0

    def at(self, x: float, y: float) -> bool:
        g = self.grid
        i = min(g.nx - 1, max(0, int((x - g.x_min) / (g.x_max - g.x_min) * g.nx)))
        j = min(g.ny - 1, max(0, int((y - g.y_min) / (g.y_max - g.y_min) * g.ny)))
        return bool(self.inside[j, i])

    def to_dict(self) -> dict:
        return {
            "fixed_point": list(self.fixed_point),
            "grid": asdict(self.grid),
            "undecided": self.undecided,
            "inside": self.inside.astype(int).tolist(),
        }


def _basin_cell(task):
    _, _, x, y = task
    return basin_status(_STATE["sys"], (x, y), _STATE["r0"], _STATE["opts"], _STATE["others"])


def other_stable_points(sys: PlanarSystem, fp: Point, box: tuple[float, float, float, float]) -> list[Point]:
    """Stable fixed points in ``box`` other than fp (attractors that compete for orbits)."""
    out = []
    for rep in find_fixed_points(sys, box, 12):
        if math.hypot(rep.location[0] - fp[0], rep.location[1] - fp[1]) < 1e-6:
            continue
        if rep.classification in ("stable node", "stable spiral"):
            out.append(rep.location)
    return out


def estimate_basin(
    sys: PlanarSystem,
    fp: Point,
    box: tuple[float, float, float, float],
    resolution: int | tuple[int, int],
    opts: IntegrationOptions | None = None,
    other_attractors: Sequence[Point] | None = None,
    workers: int | None = None,
) -> BasinRaster:
    """Per-cell basin membership of ``fp`` over ``box`` = (x0, x1, y0, y1)."""
    opts = opts or IntegrationOptions()
    rep = node_report(sys, fp)
    if not all(complex(ev).real < 0 for ev in rep.eigenvalues):
        raise ValueError(f"{fp} is not a stable fixed point ({rep.classification})")
    nx, ny = (resolution, resolution) if isinstance(resolution, int) else resolution
    grid = Grid(box[0], box[1], box[2], box[3], nx, ny)
    if other_attractors is None:
        pad = max(box[1] - box[0], box[3] - box[2])
        other_attractors = other_stable_points(
            sys, fp, (box[0] - pad, box[1] + pad, box[2] - pad, box[3] + pad)
        )
    tasks = grid.centers()
    init = (sys, (float(fp[0]), float(fp[1])), opts, tuple(other_attractors), False)
    status = _run(tasks, worker_count(workers), init, _basin_cell)
    inside = np.array([s == "inside" for s in status]).reshape(ny, nx)
    return BasinRaster(tuple(fp), grid, inside, sum(s == "horizon" for s in status))
