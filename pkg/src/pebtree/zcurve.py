"""Z-order (Morton) encoding of grid cells and rectangle decomposition.

The space ``[0, L)^2`` is cut into ``2^levels x 2^levels`` cells.  A
cell's Z-value interleaves the bits of its coordinates; rectangles of
cells decompose into maximal runs of consecutive Z-values so that a
two-dimensional window becomes a short list of one-dimensional key
intervals.

Interleave orientation is not universal across illustrations of the
curve, so it is a config flag: by default the x bit of each pair sits at
the even (less significant) position.  The reference worked example of
the 8x8 grid is reproduced with ``y_low=True`` and with curve positions
displayed 1-based; see the tests for the recorded convention.

Pure functions throughout; thread-safe.
"""

from __future__ import annotations

from dataclasses import dataclass

CellRect = tuple[int, int, int, int]  # (cx_lo, cy_lo, cx_hi, cy_hi), inclusive


@dataclass(frozen=True)
class GridConfig:
    """Geometry of the Z-curve grid.

    ``levels`` is the number of bits per axis.  ``y_low=True`` flips the
    interleave so the y bit of each pair takes the even position.
    """

    L: float = 1000.0
    levels: int = 10
    y_low: bool = False

    def __post_init__(self) -> None:
        if self.L <= 0:
            raise ValueError("space side must be positive")
        if not 1 <= self.levels <= 30:
            raise ValueError("levels must be in [1, 30]")

    @property
    def cells_per_axis(self) -> int:
        return 1 << self.levels

    @property
    def cell_size(self) -> float:
        return self.L / self.cells_per_axis

    @property
    def zv_bits(self) -> int:
        return 2 * self.levels

    @property
    def max_z(self) -> int:
        return (1 << (2 * self.levels)) - 1


def z_encode(cell: tuple[int, int], cfg: GridConfig) -> int:
    """Z-value of a grid cell by bit interleaving."""
    cx, cy = cell
    n = cfg.cells_per_axis
    if not (0 <= cx < n and 0 <= cy < n):
        raise ValueError(f"cell {cell} outside {n}x{n} grid")
    low, high = (cy, cx) if cfg.y_low else (cx, cy)
    z = 0
    for i in range(cfg.levels):
        z |= ((low >> i) & 1) << (2 * i)
        z |= ((high >> i) & 1) << (2 * i + 1)
    return z


def z_decode(z: int, cfg: GridConfig) -> tuple[int, int]:
    """Inverse of :func:`z_encode`."""
    if not 0 <= z <= cfg.max_z:
        raise ValueError(f"z-value {z} out of range")
    low = high = 0
    for i in range(cfg.levels):
        low |= ((z >> (2 * i)) & 1) << i
        high |= ((z >> (2 * i + 1)) & 1) << i
    return (high, low) if cfg.y_low else (low, high)


def cell_of(x: float, y: float, cfg: GridConfig) -> tuple[int, int]:
    """Cell containing a point; coordinates at ``L`` clamp to the last cell."""
    n = cfg.cells_per_axis
    cx = min(max(int(x / cfg.cell_size), 0), n - 1)
    cy = min(max(int(y / cfg.cell_size), 0), n - 1)
    return cx, cy


def cell_span(lo: float, hi: float, cfg: GridConfig) -> tuple[int, int]:
    """Inclusive range of cells overlapping the closed interval [lo, hi]."""
    n = cfg.cells_per_axis
    c_lo = min(max(int(lo / cfg.cell_size), 0), n - 1)
    c_hi = min(max(int(hi / cfg.cell_size), 0), n - 1)
    return c_lo, c_hi


def cells_covering(rect: tuple[float, float, float, float], cfg: GridConfig) -> CellRect:
    """Cell rectangle covering a closed continuous rectangle."""
    x_lo, y_lo, x_hi, y_hi = rect
    cx_lo, cx_hi = cell_span(x_lo, x_hi, cfg)
    cy_lo, cy_hi = cell_span(y_lo, y_hi, cfg)
    return cx_lo, cy_lo, cx_hi, cy_hi


def z_corner_interval(rect: CellRect, cfg: GridConfig) -> tuple[int, int]:
    """Minimum and maximum Z-value over a cell rectangle.

    Interleaving is monotone in each coordinate, so the extremes sit at
    the low and high corners; this is the single search interval used per
    expansion round of the kNN search.
    """
    cx_lo, cy_lo, cx_hi, cy_hi = rect
    if cx_lo > cx_hi or cy_lo > cy_hi:
        raise ValueError(f"empty cell rectangle {rect}")
    return z_encode((cx_lo, cy_lo), cfg), z_encode((cx_hi, cy_hi), cfg)


def z_decompose(rect: CellRect, cfg: GridConfig, min_block_shift: int = 0) -> list[tuple[int, int]]:
    """Decompose a cell rectangle into maximal runs of consecutive Z-values.

    With ``min_block_shift=0`` the result is exact: sorted, pairwise
    disjoint, non-adjacent intervals whose union is precisely the set of
    Z-values of cells in the rectangle.  A positive ``min_block_shift``
    stops subdividing at blocks of ``2^shift`` cells per side and emits
    partially covered blocks whole, yielding fewer, slightly wider
    intervals (a superset of the exact ones); query code uses this to
    bound per-window interval counts.
    """
    cx_lo, cy_lo, cx_hi, cy_hi = rect
    if cx_lo > cx_hi or cy_lo > cy_hi:
        return []
    n = cfg.cells_per_axis
    if not (0 <= cx_lo and cx_hi < n and 0 <= cy_lo and cy_hi < n):
        raise ValueError(f"cell rectangle {rect} outside {n}x{n} grid")

    runs: list[list[int]] = []

    def emit(lo: int, hi: int) -> None:
        if runs and runs[-1][1] + 1 == lo:
            runs[-1][1] = hi
        else:
            runs.append([lo, hi])

    y_low = cfg.y_low

    def walk(x0: int, y0: int, shift: int, z0: int) -> None:
        last = (1 << shift) - 1
        x1, y1 = x0 + last, y0 + last
        if cx_lo > x1 or cx_hi < x0 or cy_lo > y1 or cy_hi < y0:
            return
        if (cx_lo <= x0 and x1 <= cx_hi and cy_lo <= y0 and y1 <= cy_hi) or shift <= min_block_shift:
            emit(z0, z0 + (1 << (2 * shift)) - 1)
            return
        h = 1 << (shift - 1)
        quarter = 1 << (2 * (shift - 1))
        for q in range(4):
            if y_low:
                dx, dy = (q >> 1) & 1, q & 1
            else:
                dx, dy = q & 1, (q >> 1) & 1
            walk(x0 + dx * h, y0 + dy * h, shift - 1, z0 + q * quarter)

    walk(0, 0, cfg.levels, 0)
    return [(lo, hi) for lo, hi in runs]
