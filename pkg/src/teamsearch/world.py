"""Static map, search (entropy) map, square field-of-view sensing and map updates.

Grid convention: arrays are indexed ``[iy, ix]`` with row 0 at ``y = 0``.
Cell ``(ix, iy)`` covers ``[ix*res, (ix+1)*res) x [iy*res, (iy+1)*res)``.
Flat cell indices are ``iy * width + ix``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

P_LO = 0.01
P_HI = 0.99
UNKNOWN = 0.5


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(theta, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class AgentSpec:
    id: int
    v_max: float
    omega_max: float
    sense_range: float

    def __post_init__(self):
        if self.v_max <= 0:
            raise ValueError(f"agent {self.id}: v_max must be > 0, got {self.v_max}")
        if self.sense_range <= 0:
            raise ValueError(f"agent {self.id}: sense_range must be > 0, got {self.sense_range}")
        if self.omega_max <= 0:
            raise ValueError(f"agent {self.id}: omega_max must be > 0, got {self.omega_max}")


class StaticMap:
    """Known-a-priori occupancy of the search region (``True`` = obstacle)."""

    def __init__(self, obstacles, resolution: float = 1.0):
        cells = np.asarray(obstacles, dtype=bool)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise ValueError(f"static map needs a non-empty 2-D grid, got shape {cells.shape}")
        if resolution <= 0:
            raise ValueError("resolution must be > 0")
        self.cells = cells
        self.cells.setflags(write=False)
        self.resolution = float(resolution)
        self._vis_cache: dict[tuple[int, int, int], np.ndarray] = {}

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def n_cells(self) -> int:
        return self.cells.size

    @property
    def free(self) -> np.ndarray:
        return ~self.cells

    def __eq__(self, other):
        if not isinstance(other, StaticMap):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(self.cells, other.cells)

    def __repr__(self):
        return f"StaticMap({self.width}x{self.height}, res={self.resolution}, obstacles={int(self.cells.sum())})"

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def is_obstacle(self, ix: int, iy: int) -> bool:
        """Out-of-bounds cells count as obstacles."""
        if not self.in_bounds(ix, iy):
            return True
        return bool(self.cells[iy, ix])

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(x / self.resolution)), int(math.floor(y / self.resolution))

    def center_of(self, ix: int, iy: int) -> tuple[float, float]:
        return (ix + 0.5) * self.resolution, (iy + 0.5) * self.resolution

    def point_free(self, x: float, y: float) -> bool:
        ix, iy = self.cell_of(x, y)
        return not self.is_obstacle(ix, iy)

    def range_cells(self, sense_range: float) -> int:
        return int(math.floor(sense_range / self.resolution + 1e-9))

    def reachable_from(self, cells) -> np.ndarray:
        """Free cells connected to any of ``cells`` ((ix, iy) pairs).

        Diagonal moves need both orthogonal neighbours free, so this is plain
        4-connectivity over free cells.
        """
        labels, _ = ndimage.label(self.free)
        keep = {int(labels[iy, ix]) for ix, iy in cells if self.in_bounds(ix, iy)} - {0}
        return np.isin(labels, sorted(keep))

    # ---- loaders / writers -------------------------------------------------

    @classmethod
    def from_ascii(cls, text: str, resolution: float = 1.0) -> "StaticMap":
        rows = [ln.rstrip("\r") for ln in text.splitlines() if ln.strip()]
        if not rows:
            raise ValueError("empty ASCII map")
        width = len(rows[0])
        grid = np.zeros((len(rows), width), dtype=bool)
        for r, line in enumerate(rows):
            if len(line) != width:
                raise ValueError(f"ASCII map line {r + 1}: expected {width} columns, got {len(line)}")
            for c, ch in enumerate(line):
                if ch == "#":
                    grid[r, c] = True
                elif ch != ".":
                    raise ValueError(f"ASCII map line {r + 1}, column {c + 1}: unexpected {ch!r}")
        return cls(grid, resolution)

    def to_ascii(self) -> str:
        return "\n".join("".join("#" if v else "." for v in row) for row in self.cells) + "\n"

    @classmethod
    def load(cls, path, resolution: float = 1.0) -> "StaticMap":
        path = Path(path)
        if path.suffix.lower() == ".pgm":
            return cls.load_pgm(path, resolution)
        return cls.from_ascii(path.read_text(), resolution)

    @classmethod
    def load_pgm(cls, path, resolution: float = 1.0) -> "StaticMap":
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("L"))
        return cls(pixels < 128, resolution)

    def save_pgm(self, path) -> None:
        Image.fromarray(np.where(self.cells, 0, 255).astype(np.uint8), mode="L").save(path)

    @classmethod
    def from_rectangles(cls, width: int, height: int, rects=(), resolution: float = 1.0) -> "StaticMap":
        """Build a map from cell-index rectangles ``(x0, y0, x1, y1)``, bounds inclusive."""
        grid = np.zeros((height, width), dtype=bool)
        for x0, y0, x1, y1 in rects:
            grid[max(0, y0):min(height, y1 + 1), max(0, x0):min(width, x1 + 1)] = True
        return cls(grid, resolution)


class EntropyMap:
    """Per-cell occupancy probability over the static map geometry."""

    def __init__(self, m, resolution: float = 1.0, p_lo: float = P_LO, p_hi: float = P_HI):
        m = np.array(m, dtype=float)
        if m.ndim != 2:
            raise ValueError("entropy map must be 2-D")
        if np.any((m < 0) | (m > 1)):
            raise ValueError("occupancy probabilities must lie in [0, 1]")
        self.m = m
        self.resolution = float(resolution)
        self.p_lo = p_lo
        self.p_hi = p_hi

    @classmethod
    def unknown(cls, static_map: StaticMap, p_lo: float = P_LO, p_hi: float = P_HI) -> "EntropyMap":
        return cls(np.full(static_map.cells.shape, UNKNOWN), static_map.resolution, p_lo, p_hi)

    @property
    def shape(self):
        return self.m.shape

    def copy(self) -> "EntropyMap":
        return EntropyMap(self.m.copy(), self.resolution, self.p_lo, self.p_hi)

    def unknown_mask(self, eps: float = 0.2) -> np.ndarray:
        return np.abs(self.m - UNKNOWN) < eps

    def save_pgm(self, path) -> None:
        Image.fromarray(np.rint(self.m * 255.0).astype(np.uint8), mode="L").save(path)


def cell_entropy(m):
    """Binary entropy in bits, with 0 * log2(0) taken as 0. Accepts scalars or arrays."""
    arr = np.asarray(m, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise ValueError(f"occupancy probability outside [0, 1]: {m!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(arr * np.log2(arr) + (1.0 - arr) * np.log2(1.0 - arr))
    h = np.where((arr == 0.0) | (arr == 1.0), 0.0, h)
    return float(h) if h.ndim == 0 else h


def map_entropy(emap: EntropyMap) -> float:
    if emap.m.size == 0:
        return 0.0
    return float(np.sum(cell_entropy(emap.m)))


def _cast_square(obst: np.ndarray, ox: int, oy: int, r: int) -> np.ndarray:
    """Flat indices of cells in the (2r+1)^2 square visible from cell (ox, oy).

    A ray walks the major axis one cell per step with the minor offset
    ``round_half_up(i * |d_minor| / n)``. It is blocked by an obstacle strictly
    before the target, or by a diagonal step whose either orthogonal neighbour
    is an obstacle.
    """
    h, w = obst.shape
    xs = np.arange(max(0, ox - r), min(w - 1, ox + r) + 1)
    ys = np.arange(max(0, oy - r), min(h - 1, oy + r) + 1)
    tx, ty = np.meshgrid(xs, ys)
    tx, ty = tx.ravel(), ty.ravel()
    dx, dy = tx - ox, ty - oy
    adx, ady = np.abs(dx), np.abs(dy)
    sx, sy = np.sign(dx), np.sign(dy)
    n = np.maximum(adx, ady)
    nn = np.maximum(n, 1)
    blocked = np.zeros(tx.shape, dtype=bool)
    px = np.full(tx.shape, ox)
    py = np.full(tx.shape, oy)
    for i in range(1, r + 1):
        active = i <= n
        k = np.minimum(i, n)
        cx = ox + sx * ((2 * k * adx + nn) // (2 * nn))
        cy = oy + sy * ((2 * k * ady + nn) // (2 * nn))
        diag = (cx != px) & (cy != py)
        corner = diag & (obst[py, cx] | obst[cy, px])
        inner = (i < n) & obst[cy, cx]
        blocked |= active & (corner | inner)
        px, py = cx, cy
    keep = ~blocked
    return np.sort(ty[keep] * w + tx[keep])


def visible_from_cell(static_map: StaticMap, ix: int, iy: int, r: int) -> np.ndarray:
    """Cached visibility of the square of half-width ``r`` cells around ``(ix, iy)``."""
    key = (ix, iy, r)
    hit = static_map._vis_cache.get(key)
    if hit is None:
        if not static_map.in_bounds(ix, iy):
            hit = np.zeros(0, dtype=np.int64)
        else:
            hit = _cast_square(static_map.cells, ix, iy, r)
        hit.setflags(write=False)
        static_map._vis_cache[key] = hit
    return hit


def visible_cells(pose: Pose, spec: AgentSpec, static_map: StaticMap) -> np.ndarray:
    """Sorted flat indices of the cells the agent sees from ``pose``.

    The square FoV is axis-aligned and rays start at the centre of the cell
    containing the pose.
    """
    ix, iy = static_map.cell_of(pose.x, pose.y)
    return visible_from_cell(static_map, ix, iy, static_map.range_cells(spec.sense_range))


def apply_observation(emap: EntropyMap, visible, static_map: StaticMap) -> EntropyMap:
    """Snap observed cells to ``p_lo`` (free) or ``p_hi`` (obstacle). Updates in place."""
    idx = np.asarray(visible, dtype=np.int64)
    if idx.size:
        flat = emap.m.reshape(-1)
        flat[idx] = np.where(static_map.cells.reshape(-1)[idx], emap.p_hi, emap.p_lo)
    return emap


def decay_entropy(emap: EntropyMap, rate: float) -> EntropyMap:
    """Relax every cell toward 0.5: ``m' = 0.5 + (1 - rate)(m - 0.5)``. Updates in place."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"decay rate must be in [0, 1), got {rate}")
    if rate:
        emap.m = UNKNOWN + (1.0 - rate) * (emap.m - UNKNOWN)
    return emap
