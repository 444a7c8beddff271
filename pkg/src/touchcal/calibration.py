"""Screen location, height-grid measurement and the piecewise-linear model M1.

Everything here works in two frames: screen meters (x, y on the glass, the
coordinates a touch reports) and the simulator world frame (x, y, z).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .emulator import NoContact, RealWorldEmulator, lower_until_contact
from .kinematics import ContractError, IkParams, KinematicChain, forward_kinematics


class DegenerateConfiguration(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle of the screen the arm can reliably reach.

    Screen convention: the y = 0 edge is the one nearest the robot, and x grows
    to the robot's right.
    """

    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ContractError("region must have positive extent")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2])

    def corners(self) -> np.ndarray:
        return np.array([[self.x0, self.y0], [self.x1, self.y0],
                         [self.x1, self.y1], [self.x0, self.y1]])

    def contains(self, p, tol: float = 1e-12) -> bool:
        x, y = p
        return (self.x0 - tol <= x <= self.x1 + tol) and (self.y0 - tol <= y <= self.y1 + tol)

    def shrink(self, margin: float) -> "Region":
        return Region(self.x0 + margin, self.x1 - margin, self.y0 + margin, self.y1 - margin)

    def to_dict(self) -> dict:
        return {"x": [self.x0, self.x1], "y": [self.y0, self.y1]}

    @classmethod
    def from_dict(cls, d: dict) -> "Region":
        return cls(float(d["x"][0]), float(d["x"][1]), float(d["y"][0]), float(d["y"][1]))


@dataclass(frozen=True)
class AffineScreenMap:
    """screen (x, y) -> sim (x, y) affine map plus the sim plane through the edge points."""

    linear: np.ndarray      # 2x2
    offset: np.ndarray      # 2
    plane: np.ndarray       # (a, b, c): z = a x + b y + c in sim coordinates
    edge_screen: np.ndarray  # 3x2, the defining screen points
    edge_sim: np.ndarray     # 3x3, their FK images

    def __post_init__(self):
        if abs(np.linalg.det(self.linear)) <= 1e-9:
            raise DegenerateConfiguration("screen map linear part is singular")

    def to_sim(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float) @ self.linear.T + self.offset

    def to_screen(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return np.linalg.solve(self.linear, (q - self.offset).T).T

    def plane_z(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        a, b, c = self.plane
        return a * q[..., 0] + b * q[..., 1] + c

    def to_dict(self) -> dict:
        return {"linear": self.linear.tolist(), "offset": self.offset.tolist(),
                "plane": self.plane.tolist(), "edge_screen": self.edge_screen.tolist(),
                "edge_sim": self.edge_sim.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineScreenMap":
        return cls(*(np.asarray(d[k], dtype=float)
                     for k in ("linear", "offset", "plane", "edge_screen", "edge_sim")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "AffineScreenMap":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_affine_map(screen_pts, sim_pts) -> AffineScreenMap:
    """Exact affine fit through three (screen xy, sim xyz) correspondences."""
    s = np.asarray(screen_pts, dtype=float)
    w = np.asarray(sim_pts, dtype=float)
    if s.shape != (3, 2) or w.shape != (3, 3):
        raise ContractError("need exactly three screen/sim point pairs")
    A = np.column_stack([s, np.ones(3)])
    scale = max(np.abs(s[1:] - s[0]).max(), 1e-300) ** 2
    if abs(np.linalg.det(A)) <= 1e-9 * scale:
        raise DegenerateConfiguration("edge screen points are collinear")
    M = np.linalg.solve(A, w[:, :2])
    B = np.column_stack([w[:, :2], np.ones(3)])
    if abs(np.linalg.det(B)) <= 1e-12:
        raise DegenerateConfiguration("edge sim points are collinear")
    plane = np.linalg.solve(B, w[:, 2])
    return AffineScreenMap(M[:2].T.copy(), M[2].copy(), plane, s.copy(), w.copy())


def locate_screen(edge_samples: Sequence[tuple], sim_chain: KinematicChain) -> AffineScreenMap:
    """Place the screen in the simulator from three (screen point, joint readback) touches."""
    if len(edge_samples) != 3:
        raise ContractError("locate_screen needs exactly three edge samples")
    screen_pts = [np.asarray(p, dtype=float) for p, _ in edge_samples]
    sim_pts = [forward_kinematics(sim_chain, q) for _, q in edge_samples]
    return fit_affine_map(screen_pts, sim_pts)


@dataclass(frozen=True)
class HeightGrid:
    """Regular lattice of measured sim heights; ``z[i, j]`` sits at ``(xs[i], ys[j])``."""

    xs: np.ndarray
    ys: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        xs, ys, z = (np.asarray(a, dtype=float) for a in (self.xs, self.ys, self.z))
        if len(xs) < 2 or len(ys) < 2:
            raise ContractError("a height grid needs at least 2 nodes per axis")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
            raise ContractError("grid node coordinates must be strictly increasing")
        if z.shape != (len(xs), len(ys)) or not np.all(np.isfinite(z)):
            raise ContractError("z must be a finite nx x ny array")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "z", z)

    @property
    def shape(self) -> tuple[int, int]:
        return self.z.shape

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return self.xs[0], self.xs[-1], self.ys[0], self.ys[-1]

    def nodes(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["ix", "iy", "x", "y", "z"])
            for i, x in enumerate(self.xs):
                for j, y in enumerate(self.ys):
                    w.writerow([i, j, repr(float(x)), repr(float(y)), repr(float(self.z[i, j]))])

    @classmethod
    def load_csv(cls, path: str | Path) -> "HeightGrid":
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        if not rows:
            raise ContractError(f"{path}: empty height grid")
        nx = max(int(r["ix"]) for r in rows) + 1
        ny = max(int(r["iy"]) for r in rows) + 1
        xs, ys = np.full(nx, np.nan), np.full(ny, np.nan)
        z = np.full((nx, ny), np.nan)
        for r in rows:
            i, j = int(r["ix"]), int(r["iy"])
            xs[i], ys[j], z[i, j] = float(r["x"]), float(r["y"]), float(r["z"])
        return cls(xs, ys, z)


def _cell(nodes: np.ndarray, v):
    i = np.clip(np.searchsorted(nodes, v, side="right") - 1, 0, len(nodes) - 2)
    t = (v - nodes[i]) / (nodes[i + 1] - nodes[i])
    return i, t


def interp_height(grid: HeightGrid, p) -> np.ndarray | float:
    """Bilinear height at sim (x, y); accepts a single point or an (N, 2) array.

    Queries outside the lattice use the nearest edge cell's bilinear patch,
    i.e. they extrapolate rather than clamp the value.
    """
    p = np.asarray(p, dtype=float)
    i, u = _cell(grid.xs, p[..., 0])
    j, v = _cell(grid.ys, p[..., 1])
    z = grid.z
    out = ((1 - u) * (1 - v) * z[i, j] + u * (1 - v) * z[i + 1, j]
           + (1 - u) * v * z[i, j + 1] + u * v * z[i + 1, j + 1])
    return float(out) if out.ndim == 0 else out


def lattice(region: Region, nx: int, ny: int) -> np.ndarray:
    """(nx*ny, 2) screen points, edges included, x index varying slowest."""
    X, Y = np.meshgrid(np.linspace(region.x0, region.x1, nx),
                       np.linspace(region.y0, region.y1, ny), indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def sim_lattice_axes(screen_map: AffineScreenMap, region: Region, nx: int, ny: int):
    """Axis-aligned sim lattice covering the mapped region.

    Uses the inner bounding box of the four mapped corners, which coincides
    with the region when the screen axes are aligned with the sim axes.
    """
    c = screen_map.to_sim(region.corners())
    xs = np.sort(c[:, 0])
    ys = np.sort(c[:, 1])
    return np.linspace(xs[1], xs[2], nx), np.linspace(ys[1], ys[2], ny)


def measure_height_grid(screen_map: AffineScreenMap, sim_chain: KinematicChain,
                        emulator: RealWorldEmulator, region: Region, nx: int = 6, ny: int = 6,
                        *, start_offset: float = 0.02, z_step: float = 1e-3,
                        floor_offset: float = 0.06, duration: float = 2.0,
                        ik_params: IkParams = IkParams()) -> HeightGrid:
    """Lower the finger at every lattice node and record the sim z of first contact."""
    xs, ys = sim_lattice_axes(screen_map, region, nx, ny)
    z = np.empty((nx, ny))
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            z0 = float(screen_map.plane_z((x, y)))
            try:
                z[i, j], _ = lower_until_contact(
                    emulator, sim_chain, (x, y), z0 + start_offset, z_step,
                    z_floor=z0 - floor_offset, ik_params=ik_params, duration=duration)
            except NoContact as exc:
                raise NoContact(f"grid node ({i}, {j}): {exc}") from exc
            finally:
                emulator.retract(duration)
    return HeightGrid(xs, ys, z)


def m1_predict(screen_map: AffineScreenMap, grid: HeightGrid, target) -> np.ndarray:
    """Screen point(s) -> sim point(s): affine xy, bilinear z from the height grid."""
    xy = screen_map.to_sim(target)
    z = np.asarray(interp_height(grid, xy))
    return np.concatenate([xy, z[..., None]], axis=-1)
