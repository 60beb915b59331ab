"""Evidential occupancy grids over the frame {Free, Occupied}.

Each cell carries a belief mass triple (m_free, m_occ, m_unknown) with
m_unknown the mass on the whole frame (ignorance).  Scans are turned into
per-cell evidence by an inverse sensor model and fused cell-wise with
Dempster's normalized conjunctive rule:

    K      = m1_free * m2_occ + m1_occ * m2_free          (conflict)
    m_free = (m1_f*m2_f + m1_f*m2_u + m1_u*m2_f) / (1 - K)
    m_occ  = (m1_o*m2_o + m1_o*m2_u + m1_u*m2_o) / (1 - K)
    m_unk  = (m1_u*m2_u) / (1 - K)

The vacuous mass (0, 0, 1) is the identity of the rule.  When the
normalizer 1 - K falls below ``CONFLICT_EPS`` the combination is undefined
(total conflict); the scalar operation raises, while grid-level fusion
resolves the affected cell to vacuous so one contradictory cell cannot
abort a whole cycle.

Conventions
-----------
* Grids are row-major ``(height, width, 3)`` float64 arrays with channels
  ``(m_free, m_occ, m_unknown)``.  Cell (0, 0) covers the square whose
  lower-left metric corner is ``GridSpec.origin``; row index grows with +y,
  column index with +x.
* The tensor encoding for the classifier is ``(3, H, W)`` with channels
  ``(m_occ, m_free, m_unknown)``, mirroring the red/green/black rendering
  of occupied/free/unknown cells.
* PPM export writes rows top-first (maximum y first), R = occupied,
  G = free, B = 0, so unknown cells render black.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng

CONFLICT_EPS = 1e-9
MASS_SUM_TOL = 1e-9

# Single-scan evidence strength for the inverse sensor model.  Moderate
# values leave ignorance mass so repeated fusion sharpens beliefs instead of
# saturating after one scan.
DEFAULT_LAMBDA_FREE = 0.6
DEFAULT_LAMBDA_OCC = 0.7


class InvalidMass(ValueError):
    """Mass components negative or not summing to one."""


class TotalConflict(ArithmeticError):
    """Dempster's rule undefined: the normalizer 1 - K vanished."""


class PoseOutsideGrid(ValueError):
    """Sensor cell lies outside the grid."""


class SpecMismatch(ValueError):
    """Grids with different dimensions or resolution cannot be fused."""


@dataclass(frozen=True)
class MassAssignment:
    """Belief mass triple over {Free, Occupied}; m_unknown sits on the frame."""

    m_free: float
    m_occ: float
    m_unknown: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.m_free, self.m_occ, self.m_unknown)


VACUOUS = MassAssignment(0.0, 0.0, 1.0)


def mass_new(m_free: float, m_occ: float, m_unknown: float) -> MassAssignment:
    """Validated mass triple: components non-negative, summing to one."""
    if m_free < 0.0 or m_occ < 0.0 or m_unknown < 0.0:
        raise InvalidMass(f"negative mass component ({m_free}, {m_occ}, {m_unknown})")
    total = m_free + m_occ + m_unknown
    if abs(total - 1.0) > MASS_SUM_TOL:
        raise InvalidMass(f"mass sum {total!r} differs from 1 by more than {MASS_SUM_TOL}")
    return MassAssignment(m_free, m_occ, m_unknown)


def conflict(m1: MassAssignment, m2: MassAssignment) -> float:
    """Mass product assigned to contradictory focal pairs, K in [0, 1]."""
    return m1.m_free * m2.m_occ + m1.m_occ * m2.m_free


def ds_combine(m1: MassAssignment, m2: MassAssignment) -> MassAssignment:
    """Dempster's normalized conjunctive combination of two mass triples."""
    k = conflict(m1, m2)
    denom = 1.0 - k
    if denom < CONFLICT_EPS:
        raise TotalConflict(f"conflict K={k!r} leaves no mass to normalize")
    free = m1.m_free * m2.m_free + m1.m_free * m2.m_unknown + m1.m_unknown * m2.m_free
    occ = m1.m_occ * m2.m_occ + m1.m_occ * m2.m_unknown + m1.m_unknown * m2.m_occ
    unk = m1.m_unknown * m2.m_unknown
    return MassAssignment(free / denom, occ / denom, unk / denom)


def decay(m: MassAssignment, factor: float) -> MassAssignment:
    """Temporal forgetting: scale committed mass by factor, rest to unknown."""
    if not 0.0 <= factor <= 1.0:
        raise ValueError(f"decay factor {factor} outside [0, 1]")
    free = factor * m.m_free
    occ = factor * m.m_occ
    return MassAssignment(free, occ, 1.0 - free - occ)


@dataclass(frozen=True)
class GridSpec:
    """Grid geometry: width x height cells, metric resolution, and the
    metric coordinates of the lower-left corner of cell (0, 0)."""

    width: int
    height: int
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("grid dimensions must be positive")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @classmethod
    def centered(cls, width: int = 125, height: int = 125, resolution: float = 0.25,
                 center: tuple[float, float] = (0.0, 0.0)) -> "GridSpec":
        """Spec whose metric extent is centered on ``center``."""
        ox = center[0] - 0.5 * width * resolution
        oy = center[1] - 0.5 * height * resolution
        return cls(width, height, resolution, (ox, oy))

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the cell containing metric point (x, y)."""
        col = math.floor((x - self.origin[0]) / self.resolution)
        row = math.floor((y - self.origin[1]) / self.resolution)
        return row, col

    def contains_cell(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width


@dataclass(frozen=True)
class SensorPose:
    """2D sensor pose; heading normalized to (-pi, pi]."""

    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        h = math.remainder(self.heading, math.tau)
        if h <= -math.pi:
            h += math.tau
        object.__setattr__(self, "heading", h)


@dataclass
class OccupancyGrid:
    """Lattice of mass triples; ``masses`` is (H, W, 3) float64 with
    channels (m_free, m_occ, m_unknown)."""

    spec: GridSpec
    masses: np.ndarray = field(repr=False)

    @classmethod
    def vacuous(cls, spec: GridSpec) -> "OccupancyGrid":
        masses = np.zeros((spec.height, spec.width, 3), dtype=np.float64)
        masses[..., 2] = 1.0
        return cls(spec, masses)

    def cell(self, row: int, col: int) -> MassAssignment:
        f, o, u = self.masses[row, col]
        return MassAssignment(float(f), float(o), float(u))

    def validate(self, tol: float = MASS_SUM_TOL) -> None:
        """Raise InvalidMass unless every cell is a valid mass triple."""
        if self.masses.shape != (self.spec.height, self.spec.width, 3):
            raise InvalidMass(f"mass array shape {self.masses.shape} does not match spec")
        if np.any(self.masses < 0.0):
            raise InvalidMass("negative mass component in grid")
        sums = self.masses.sum(axis=2)
        worst = float(np.abs(sums - 1.0).max())
        if worst > tol:
            raise InvalidMass(f"cell mass sums deviate from 1 by up to {worst}")

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.spec, self.masses.copy())


def combine_masses(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Element-wise Dempster combination of two (..., 3) mass arrays.

    Cells in total conflict (1 - K < CONFLICT_EPS) resolve to the vacuous
    mass instead of raising.
    """
    af, ao, au = a[..., 0], a[..., 1], a[..., 2]
    bf, bo, bu = b[..., 0], b[..., 1], b[..., 2]
    k = af * bo + ao * bf
    denom = 1.0 - k
    singular = denom < CONFLICT_EPS
    safe = np.where(singular, 1.0, denom)
    out = np.empty(np.broadcast(a, b).shape, dtype=np.float64)
    out[..., 0] = (af * bf + af * bu + au * bf) / safe
    out[..., 1] = (ao * bo + ao * bu + au * bo) / safe
    out[..., 2] = (au * bu) / safe
    out[singular] = (0.0, 0.0, 1.0)
    return out


def fuse(target: OccupancyGrid, evidence: OccupancyGrid,
         decay_factor: float = 1.0) -> OccupancyGrid:
    """Cell-wise DS fusion of an evidence grid into a target grid.

    The target is first decayed (decay_factor 1.0 keeps it unchanged), then
    combined with the evidence.  Returns a new grid.
    """
    if target.spec != evidence.spec:
        raise SpecMismatch(f"{target.spec} != {evidence.spec}")
    if not 0.0 <= decay_factor <= 1.0:
        raise ValueError(f"decay factor {decay_factor} outside [0, 1]")
    prior = target.masses
    if decay_factor != 1.0:
        prior = prior.copy()
        prior[..., 0] *= decay_factor
        prior[..., 1] *= decay_factor
        prior[..., 2] = 1.0 - prior[..., 0] - prior[..., 1]
    return OccupancyGrid(target.spec, combine_masses(prior, evidence.masses))


def _beam_cells(pose_xy: np.ndarray, dirs: np.ndarray, dists: np.ndarray,
                returned: np.ndarray, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Grid-line DDA for a batch of beams, stepped in lockstep.

    Returns boolean (H, W) masks ``free`` and ``occupied``.  A beam
    contributes every cell it enters strictly before its endpoint cell to
    ``free``; the endpoint cell goes to ``occupied`` for returned beams and
    to ``free`` for beams that ran out at max range.

    The traversal is the supercover walk of Amanatides & Woo: starting from
    the sensor cell, repeatedly step across whichever cell boundary the ray
    crosses first (ties step x first).  Every cell the continuous ray
    passes through is visited, so diagonals never skip cells.  The sensor's
    own cell is excluded: a beam of length one cell contributes no free
    evidence, only its hit cell.
    """
    n = dirs.shape[0]
    res = spec.resolution
    ox, oy = spec.origin

    col0 = math.floor((pose_xy[0] - ox) / res)
    row0 = math.floor((pose_xy[1] - oy) / res)
    if not spec.contains_cell(row0, col0):
        raise PoseOutsideGrid(f"sensor cell ({row0}, {col0}) outside {spec.width}x{spec.height} grid")

    ends = pose_xy[None, :] + dists[:, None] * dirs
    ecol = np.floor((ends[:, 0] - ox) / res).astype(np.int64)
    erow = np.floor((ends[:, 1] - oy) / res).astype(np.int64)

    dx, dy = dirs[:, 0], dirs[:, 1]
    step_x = np.sign(dx).astype(np.int64)
    step_y = np.sign(dy).astype(np.int64)
    with np.errstate(divide="ignore"):
        tdx = np.where(dx != 0.0, res / np.abs(dx), np.inf)
        tdy = np.where(dy != 0.0, res / np.abs(dy), np.inf)
        # distance along the beam to the first x/y cell-boundary crossing
        next_x = ox + (col0 + (step_x > 0)) * res
        next_y = oy + (row0 + (step_y > 0)) * res
        tmx = np.where(dx != 0.0, (next_x - pose_xy[0]) / dx, np.inf)
        tmy = np.where(dy != 0.0, (next_y - pose_xy[1]) / dy, np.inf)

    col = np.full(n, col0, dtype=np.int64)
    row = np.full(n, row0, dtype=np.int64)
    active = np.ones(n, dtype=bool)

    free = np.zeros((spec.height, spec.width), dtype=bool)
    occupied = np.zeros((spec.height, spec.width), dtype=bool)

    # Each step leaves one cell, so the walk length is bounded by the grid
    # perimeter plus the endpoint cell.
    overshoot = dists * (1.0 + 1e-12) + 1e-12
    for _ in range(spec.width + spec.height + 2):
        at_end = active & (col == ecol) & (row == erow)
        if at_end.any():
            hit = at_end & returned
            open_end = at_end & ~returned
            if hit.any():
                occupied[row[hit], col[hit]] = True
            if open_end.any():
                free[row[open_end], col[open_end]] = True
            active &= ~at_end
        if not active.any():
            break
        use_x = active & (tmx <= tmy)
        use_y = active & ~use_x
        t_new = np.where(use_x, tmx, tmy)
        col[use_x] += step_x[use_x]
        row[use_y] += step_y[use_y]
        tmx[use_x] += tdx[use_x]
        tmy[use_y] += tdy[use_y]
        # endpoint numerically on a boundary can leave ecol/erow one past
        # the last crossed cell; stop rather than overshoot the beam
        dead = active & (t_new > overshoot)
        dead |= active & ((col < 0) | (col >= spec.width) | (row < 0) | (row >= spec.height))
        active &= ~dead
        mark = active & ~((col == ecol) & (row == erow))
        if mark.any():
            free[row[mark], col[mark]] = True
    return free, occupied


def inverse_sensor_model(scan, pose: SensorPose, spec: GridSpec,
                         lambda_free: float = DEFAULT_LAMBDA_FREE,
                         lambda_occ: float = DEFAULT_LAMBDA_OCC) -> OccupancyGrid:
    """Single-scan evidence grid.

    Every cell a beam passes through strictly before its hit receives
    (lambda_free, 0, 1 - lambda_free); the hit cell receives
    (0, lambda_occ, 1 - lambda_occ).  Beams at max range carry no return:
    all their cells count as free.  Cells beyond a beam's endpoint and
    untouched cells stay vacuous.  Where beams disagree within the scan,
    occupied evidence wins over free.
    """
    if not 0.0 < lambda_free < 1.0 or not 0.0 < lambda_occ < 1.0:
        raise ValueError("evidence strengths must lie strictly inside (0, 1)")
    grid = OccupancyGrid.vacuous(spec)
    n = scan.ranges.shape[0]
    if n == 0:
        return grid
    if np.any(scan.ranges > scan.max_range):
        raise ValueError("scan range exceeds max_range")

    angles = pose.heading + beam_angles(n, scan.fov)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    pose_xy = np.array([pose.x, pose.y], dtype=np.float64)

    returned = scan.ranges < scan.max_range
    free_cells, hit_cells = _beam_cells(pose_xy, dirs, scan.ranges, returned, spec)

    masses = grid.masses
    masses[free_cells] = (lambda_free, 0.0, 1.0 - lambda_free)
    masses[hit_cells] = (0.0, lambda_occ, 1.0 - lambda_occ)
    return grid


def beam_angles(n_beams: int, fov: float) -> np.ndarray:
    """Beam angles relative to the sensor heading: linear spacing across
    the field of view, inclusive of both ends (a single beam points along
    the heading)."""
    if n_beams < 1:
        raise ValueError("n_beams must be >= 1")
    if n_beams == 1:
        return np.zeros(1)
    return np.linspace(-0.5 * fov, 0.5 * fov, n_beams)


def grid_to_tensor(grid: OccupancyGrid) -> np.ndarray:
    """(3, H, W) float64 tensor with channels (m_occ, m_free, m_unknown)."""
    return np.ascontiguousarray(grid.masses[..., [1, 0, 2]].transpose(2, 0, 1))


def tensor_to_grid(tensor: np.ndarray, spec: GridSpec) -> OccupancyGrid:
    """Inverse of ``grid_to_tensor``."""
    if tensor.shape != (3, spec.height, spec.width):
        raise ValueError(f"tensor shape {tensor.shape} does not match spec")
    masses = np.ascontiguousarray(tensor[[1, 0, 2]].transpose(1, 2, 0))
    return OccupancyGrid(spec, masses)


def grid_to_ppm(grid: OccupancyGrid) -> bytes:
    """Binary PPM (P6, maxval 255): R = occupied, G = free, B = 0.

    Rows are written top-first (maximum y first); vacuous cells are black.
    """
    rgb = np.zeros((grid.spec.height, grid.spec.width, 3), dtype=np.uint8)
    rgb[..., 0] = np.rint(255.0 * grid.masses[..., 1]).astype(np.uint8)
    rgb[..., 1] = np.rint(255.0 * grid.masses[..., 0]).astype(np.uint8)
    header = f"P6\n{grid.spec.width} {grid.spec.height}\n255\n".encode("ascii")
    return header + rgb[::-1].tobytes()
