"""The six-step calibration procedure, dataset collection and error statistics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .calibration import (
    AffineScreenMap,
    HeightGrid,
    Region,
    lattice,
    locate_screen,
    m1_predict,
    measure_height_grid,
)
from .emulator import (
    CONTACT_EPSILON,
    PerturbationConfig,
    RealWorldEmulator,
    Screen,
    build_real_world,
)
from .kinematics import (
    ContractError,
    IkParams,
    KinematicChain,
    NoConvergence,
    load_chain,
    solve_ik,
)
from .neural import (
    M2_LAYERS,
    M3_LAYERS,
    NetModel,
    TrainConfig,
    cross_validate,
    fit_model,
    m2_predict,
    m3_predict,
)

DATA_DIR = Path(__file__).parent / "data"
DEFAULT_SCENE = DATA_DIR / "default_scene.json"

# emulator noise streams, one per procedure stage, so that step-wise and
# full runs see identical noise
STREAM_LOCATE, STREAM_GRID, STREAM_COLLECT, STREAM_EVAL, STREAM_ERROR_MAP = range(5)
# rng tags for target generation
TARGETS_M1, TARGETS_EVAL, TARGETS_REACH = 10, 11, 12

QUADRANTS = ("Q1", "Q2", "Q3", "Q4")


class InsufficientData(ValueError):
    pass


class StepFailed(RuntimeError):
    """A procedure step failed; ``step`` names it."""

    def __init__(self, step: str, cause: Exception):
        super().__init__(f"step '{step}' failed: {cause}")
        self.step = step
        self.cause = cause


@dataclass
class Scene:
    chain: KinematicChain
    screen: Screen
    region: Region
    edge_points: np.ndarray
    perturbation: PerturbationConfig
    seed: int
    contact_epsilon: float = CONTACT_EPSILON
    press_depth: float = 0.003
    ik: IkParams = field(default_factory=IkParams)
    grid: dict = field(default_factory=lambda: {"nx": 6, "ny": 6, "start_offset": 0.02,
                                                "z_step": 0.001})
    targets: dict = field(default_factory=lambda: {"m1_pattern": 130, "m1_random": 120,
                                                   "eval": 250, "margin": 0.02})
    training: dict = field(default_factory=dict)

    def emulator(self, stream: int = 0) -> RealWorldEmulator:
        return build_real_world(self.chain, self.perturbation, self.screen,
                                contact_epsilon=self.contact_epsilon, stream=stream)

    @property
    def training_duration(self) -> float:
        return float(self.training.get("duration", 2))

    def train_config(self, offset: int = 0) -> TrainConfig:
        t = self.training
        return TrainConfig(epochs=int(t.get("epochs", 200)),
                           learning_rate=float(t.get("learning_rate", 1e-3)),
                           beta1=float(t.get("beta1", 0.9)), beta2=float(t.get("beta2", 0.999)),
                           epsilon=float(t.get("epsilon", 1e-7)),
                           batch_size=t.get("batch_size", 8),
                           rng_seed=self.seed * 1000 + offset)

    def with_perturbation(self, cfg: PerturbationConfig) -> "Scene":
        return replace(self, perturbation=cfg)


def scene_from_dict(d: dict, base_dir: Path = DATA_DIR, seed: Optional[int] = None) -> Scene:
    chain_ref = d.get("chain", "nico_right_arm.json")
    chain_path = Path(chain_ref)
    if not chain_path.is_absolute():
        chain_path = base_dir / chain_path
        if not chain_path.exists():
            chain_path = DATA_DIR / chain_ref
    chain = load_chain(chain_path)
    seed = int(d.get("seed", 0)) if seed is None else int(seed)
    edge = np.asarray(d["edge_points"], dtype=float)
    if edge.shape != (3, 2):
        raise ContractError("edge_points must hold three (x, y) screen points")
    return Scene(
        chain=chain,
        screen=Screen.from_dict(d.get("screen", {})),
        region=Region.from_dict(d["region"]),
        edge_points=edge,
        perturbation=PerturbationConfig.from_dict(d.get("perturbation", {}), chain, seed),
        seed=seed,
        contact_epsilon=float(d.get("contact_epsilon", CONTACT_EPSILON)),
        press_depth=float(d.get("press_depth", 0.003)),
        ik=IkParams(**d.get("ik", {})),
        grid={"nx": 6, "ny": 6, "start_offset": 0.02, "z_step": 0.001, **d.get("grid", {})},
        targets={"m1_pattern": 130, "m1_random": 120, "eval": 250, "margin": 0.02,
                 **d.get("targets", {})},
        training=dict(d.get("training", {})),
    )


def load_scene(path: str | Path = DEFAULT_SCENE, seed: Optional[int] = None) -> Scene:
    path = Path(path)
    with open(path) as f:
        d = json.load(f)
    return scene_from_dict(d, path.parent, seed)


# ---------------------------------------------------------------- targets

@dataclass
class TargetSet:
    points: np.ndarray
    kind: str
    seed: int


def _lattice_shape(n: int, wide: bool) -> tuple[int, int]:
    a = int(math.isqrt(n))
    while n % a:
        a -= 1
    short, long_ = a, n // a
    return (long_, short) if wide else (short, long_)


def generate_targets(region: Region, kind: str, n: int, seed: int,
                     margin: float = 0.02) -> TargetSet:
    """Screen targets inside ``region``.

    ``grid_pattern`` is the most nearly square nx * ny == n lattice over the
    whole region (more nodes along the longer side); ``random`` is uniform over
    the region shrunk by ``margin``; ``random_with_edges`` is uniform over all
    of it.
    """
    if n < 1:
        raise ContractError("need at least one target")
    if kind == "grid_pattern":
        nx, ny = _lattice_shape(n, region.width >= region.height)
        pts = lattice(region, nx, ny)
    elif kind in ("random", "random_with_edges"):
        r = region
        if kind == "random":
            if 2 * margin >= min(region.width, region.height):
                raise ContractError(f"region too small for a {margin} m margin")
            r = region.shrink(margin)
        rng = np.random.default_rng(seed)
        pts = np.column_stack([rng.uniform(r.x0, r.x1, n), rng.uniform(r.y0, r.y1, n)])
    else:
        raise ContractError(f"unknown target kind {kind!r}")
    return TargetSet(pts, kind, seed)


# ---------------------------------------------------------------- models

class M1Model:
    tag = "M1"

    def __init__(self, screen_map: AffineScreenMap, grid: HeightGrid):
        self.screen_map = screen_map
        self.grid = grid

    def predict(self, target) -> np.ndarray:
        return m1_predict(self.screen_map, self.grid, target)


class M2Model:
    tag = "M2"

    def __init__(self, net: NetModel, grid: HeightGrid):
        self.net = net
        self.grid = grid

    def predict(self, target) -> np.ndarray:
        return m2_predict(self.net, self.grid, target)


class M3Model:
    tag = "M3"

    def __init__(self, net: NetModel):
        self.net = net

    def predict(self, target) -> np.ndarray:
        return m3_predict(self.net, target)


# ---------------------------------------------------------------- collection

@dataclass
class CalibrationSample:
    target_screen: np.ndarray
    commanded_sim: np.ndarray
    commanded_joints: np.ndarray
    contact_screen: Optional[np.ndarray]
    joints_readback: np.ndarray
    duration: float
    model_tag: str
    ik_ok: bool = True


def collect_dataset(model, sim_chain: KinematicChain, emulator: RealWorldEmulator,
                    targets, duration: float, *, press_depth: float = 0.003,
                    ik_params: IkParams = IkParams(), seed_posture=None) -> list[CalibrationSample]:
    """Touch every target once, returning home between touches.

    The IK goal sits ``press_depth`` below the model's sim point so the finger
    presses into the glass; the stored ``commanded_sim`` is the model output.
    """
    if float(duration) not in emulator.durations:
        raise ContractError(f"unknown movement duration {duration!r}")
    seed_q = sim_chain.posture("ready") if seed_posture is None else np.asarray(seed_posture)
    pts = targets.points if isinstance(targets, TargetSet) else np.asarray(targets, dtype=float)
    press = np.array([0.0, 0.0, press_depth])
    samples = []
    for t in pts:
        p = np.asarray(model.predict(t), dtype=float)
        try:
            q = solve_ik(sim_chain, p - press, seed_q, ik_params)
        except NoConvergence as exc:
            samples.append(CalibrationSample(t.copy(), p, exc.q, None,
                                             np.full(sim_chain.n_joints, np.nan),
                                             float(duration), model.tag, ik_ok=False))
            continue
        res = emulator.touch_screen(q, duration)
        emulator.retract(duration)
        samples.append(CalibrationSample(t.copy(), p, q, res.contact, res.joints_readback,
                                         float(duration), model.tag))
    return samples


def build_training_pairs(samples: Sequence[CalibrationSample],
                         min_pairs: int = 10) -> tuple[np.ndarray, np.ndarray, int]:
    """(observed contacts, commanded sim points, number of dropped samples)."""
    usable = [s for s in samples if s.contact_screen is not None]
    if len(usable) < min_pairs:
        raise InsufficientData(f"only {len(usable)} samples with contact; need {min_pairs}")
    X = np.array([s.contact_screen for s in usable])
    Y = np.array([s.commanded_sim for s in usable])
    return X, Y, len(samples) - len(usable)


# ---------------------------------------------------------------- statistics

def quadrant_of(p, region: Region) -> str:
    """Q1/Q2 are the half nearer the base (low y), Q1/Q3 the left half (low x).

    Points on a midline go to the lower-numbered quadrant.
    """
    if not region.contains(p):
        raise ContractError(f"point {tuple(p)} outside the region")
    cx, cy = region.center
    far = p[1] > cy
    right = p[0] > cx
    return QUADRANTS[2 * far + right]


def _dist_stats(d: np.ndarray) -> dict:
    if len(d) == 0:
        return {"n": 0, "mean": None, "std": None, "median": None, "max": None}
    d = np.sort(d)  # order-independent summation
    return {"n": int(len(d)), "mean": float(np.mean(d)), "std": float(np.std(d)),
            "median": float(np.median(d)), "max": float(d[-1])}


@dataclass
class DeviationReport:
    """Pooled statistics of one model evaluation; distances in cm, angles in degrees."""

    model: str
    duration: float
    n_targets: int
    miss_count: int
    overall: dict
    quadrants: dict
    joints: dict

    def to_dict(self) -> dict:
        return {"model": self.model, "duration_s": self.duration, "n_targets": self.n_targets,
                "miss_count": self.miss_count, "overall": self.overall,
                "quadrants": self.quadrants, "joints": self.joints}

    @classmethod
    def from_dict(cls, d: dict) -> "DeviationReport":
        return cls(d["model"], float(d["duration_s"]), int(d["n_targets"]),
                   int(d["miss_count"]), d["overall"], d["quadrants"], d["joints"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def deviation_report(samples: Sequence[CalibrationSample], region: Region,
                     joint_names: Sequence[str]) -> DeviationReport:
    hits = [s for s in samples if s.contact_screen is not None]
    dev_cm = np.array([100.0 * np.linalg.norm(s.contact_screen - s.target_screen) for s in hits])
    quads = np.array([quadrant_of(np.clip(s.target_screen, [region.x0, region.y0],
                                          [region.x1, region.y1]), region) for s in hits])
    per_q = {q: _dist_stats(dev_cm[quads == q] if len(hits) else np.array([]))
             for q in QUADRANTS}
    moved = [s for s in samples if s.ik_ok]
    joints = {}
    if moved:
        jd = np.degrees(np.abs(np.array([s.commanded_joints - s.joints_readback for s in moved])))
        jd = np.sort(jd, axis=0)
        for i, name in enumerate(joint_names):
            joints[name] = {"mean_abs": float(np.mean(jd[:, i])),
                            "median_abs": float(np.median(jd[:, i]))}
    tag = samples[0].model_tag if samples else ""
    duration = samples[0].duration if samples else float("nan")
    return DeviationReport(tag, duration, len(samples), len(samples) - len(hits),
                           _dist_stats(dev_cm), per_q, joints)


def evaluate_model(model, sim_chain: KinematicChain, emulator: RealWorldEmulator, targets,
                   duration: float, region: Region, **kwargs):
    """Collect with ``model`` and summarize; returns (report, samples)."""
    samples = collect_dataset(model, sim_chain, emulator, targets, duration, **kwargs)
    return deviation_report(samples, region, sim_chain.names), samples


# ---------------------------------------------------------------- persistence

def dataset_header(n_joints: int) -> list[str]:
    return (["model", "duration_s", "target_x", "target_y", "cmd_x", "cmd_y", "cmd_z"]
            + [f"j_s_{i}" for i in range(n_joints)] + ["contact", "hit_x", "hit_y"]
            + [f"j_r_{i}" for i in range(n_joints)])


def _f(v: float) -> str:
    return "" if not np.isfinite(v) else repr(float(v))


def save_dataset_csv(samples: Sequence[CalibrationSample], path: str | Path,
                     n_joints: int = 7) -> None:
    if samples:
        n_joints = len(samples[0].commanded_joints)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(dataset_header(n_joints))
        for s in samples:
            hit = s.contact_screen
            w.writerow([s.model_tag, f"{s.duration:g}", _f(s.target_screen[0]),
                        _f(s.target_screen[1])]
                       + [_f(v) for v in s.commanded_sim]
                       + [_f(v) for v in s.commanded_joints]
                       + ["1" if hit is not None else "0",
                          _f(hit[0]) if hit is not None else "",
                          _f(hit[1]) if hit is not None else ""]
                       + [_f(v) for v in s.joints_readback])


def load_dataset_csv(path: str | Path) -> list[CalibrationSample]:
    def num(v):
        return float(v) if v != "" else float("nan")

    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        n = sum(1 for h in header if h.startswith("j_s_"))
        col = {h: i for i, h in enumerate(header)}
        samples = []
        for row in reader:
            js = np.array([num(row[col[f"j_s_{i}"]]) for i in range(n)])
            jr = np.array([num(row[col[f"j_r_{i}"]]) for i in range(n)])
            hit = None
            if row[col["contact"]] == "1":
                hit = np.array([num(row[col["hit_x"]]), num(row[col["hit_y"]])])
            samples.append(CalibrationSample(
                np.array([num(row[col["target_x"]]), num(row[col["target_y"]])]),
                np.array([num(row[col[k]]) for k in ("cmd_x", "cmd_y", "cmd_z")]),
                js, hit, jr, float(row[col["duration_s"]]), row[col["model"]],
                ik_ok=bool(np.all(np.isfinite(jr)))))
    return samples


# ---------------------------------------------------------------- procedure steps

def reach_fraction(scene: Scene, nx: int = 16, ny: int = 10) -> float:
    """Fraction of a screen lattice the real arm can be hand-guided onto."""
    emu = scene.emulator(STREAM_LOCATE)
    full = Region(0.0, scene.screen.width, 0.0, scene.screen.height)
    ok = 0
    for p in lattice(full, nx, ny):
        try:
            emu.guide_to(p)
            ok += 1
        except NoConvergence:
            pass
    return ok / (nx * ny)


def step_operational_region(scene: Scene, n: int = 5) -> Region:
    """Step 1: confirm the configured region is reachable on the real arm."""
    emu = scene.emulator(STREAM_LOCATE)
    for p in lattice(scene.region, n, n):
        try:
            emu.guide_to(p)
        except NoConvergence as exc:
            raise ContractError(f"region point {tuple(p)} is not reachable") from exc
    return scene.region


def step_locate(scene: Scene) -> AffineScreenMap:
    """Step 2: hand-guide onto the three edge points and fit the screen map."""
    emu = scene.emulator(STREAM_LOCATE)
    samples = []
    for p in scene.edge_points:
        samples.append((p, emu.guide_to(p)))
        emu.retract()
    return locate_screen(samples, scene.chain)


def step_grid(scene: Scene, screen_map: AffineScreenMap) -> HeightGrid:
    """Step 3: measure the contact height at every lattice node."""
    g = scene.grid
    return measure_height_grid(screen_map, scene.chain, scene.emulator(STREAM_GRID),
                               scene.region, int(g["nx"]), int(g["ny"]),
                               start_offset=float(g["start_offset"]),
                               z_step=float(g["z_step"]), duration=scene.training_duration,
                               ik_params=scene.ik)


def m1_targets(scene: Scene) -> np.ndarray:
    """Step 4 targets: a lattice over the whole region plus uniform random interior points.

    The lattice reaches the region edges so the evaluation set, which also
    touches the edges, never asks the networks to extrapolate far.
    """
    t = scene.targets
    margin = float(t["margin"])
    parts = []
    if int(t["m1_pattern"]) > 0:
        parts.append(generate_targets(scene.region, "grid_pattern", int(t["m1_pattern"]), 0).points)
    if int(t["m1_random"]) > 0:
        parts.append(generate_targets(scene.region, "random", int(t["m1_random"]),
                                      _seed(scene, TARGETS_M1), margin).points)
    return np.vstack(parts)


def eval_targets(scene: Scene) -> np.ndarray:
    return generate_targets(scene.region, "random_with_edges", int(scene.targets["eval"]),
                            _seed(scene, TARGETS_EVAL)).points


def _seed(scene: Scene, tag: int) -> list[int]:
    return [scene.seed, tag]


def step_collect(scene: Scene, screen_map: AffineScreenMap, grid: HeightGrid,
                 duration: float) -> list[CalibrationSample]:
    """Step 5: drive the real arm to the M1 targets and record the hits."""
    return collect_dataset(M1Model(screen_map, grid), scene.chain,
                           scene.emulator(STREAM_COLLECT), m1_targets(scene), duration,
                           press_depth=scene.press_depth, ik_params=scene.ik)


def step_train(scene: Scene, samples: Sequence[CalibrationSample], k: int = 5):
    """Step 6: fit M2 and M3 on the inverted M1 data, with k-fold CV scores."""
    X, Y, dropped = build_training_pairs(samples)
    cfg2, cfg3 = scene.train_config(2), scene.train_config(3)
    m2 = fit_model("M2", X, Y[:, :2], cfg2, M2_LAYERS)
    m3 = fit_model("M3", X, Y, cfg3, M3_LAYERS)
    for m in (m2, m3):
        m.training["dropped_samples"] = dropped
    cv = {"k": k,
          "M2": cross_validate(X, Y[:, :2], M2_LAYERS, cfg2, k),
          "M3": cross_validate(X, Y, M3_LAYERS, cfg3, k)}
    return m2, m3, cv


def step_evaluate(scene: Scene, models: Sequence, duration: Optional[float] = None):
    """Evaluate each model on the same fresh edge-inclusive target set.

    Every model gets its own emulator with the same noise stream.
    """
    duration = scene.training_duration if duration is None else duration
    targets = eval_targets(scene)
    out = {}
    for model in models:
        out[model.tag] = evaluate_model(model, scene.chain, scene.emulator(STREAM_EVAL),
                                        targets, duration, scene.region,
                                        press_depth=scene.press_depth, ik_params=scene.ik)
    return out


def error_map(scene: Scene, model, nx: int = 12, ny: int = 7,
              duration: Optional[float] = None) -> list[tuple]:
    """(ix, iy, x, y, deviation cm or None) over a lattice of the region."""
    duration = scene.training_duration if duration is None else duration
    pts = lattice(scene.region, nx, ny)
    samples = collect_dataset(model, scene.chain, scene.emulator(STREAM_ERROR_MAP), pts,
                              duration, press_depth=scene.press_depth, ik_params=scene.ik)
    rows = []
    for k, s in enumerate(samples):
        ix, iy = divmod(k, ny)
        d = None
        if s.contact_screen is not None:
            d = 100.0 * float(np.linalg.norm(s.contact_screen - s.target_screen))
        rows.append((ix, iy, float(s.target_screen[0]), float(s.target_screen[1]), d))
    return rows


@dataclass
class ProcedureResult:
    scene: Scene
    region: Region
    screen_map: AffineScreenMap
    grid: HeightGrid
    m1_datasets: dict
    m1_reports: dict
    m2: NetModel
    m3: NetModel
    cv: dict
    eval_samples: dict
    eval_reports: dict

    def models(self):
        return (M1Model(self.screen_map, self.grid), M2Model(self.m2, self.grid),
                M3Model(self.m3))


def run_full_procedure(scene: Scene, durations: Sequence[float] = (1, 2, 3)) -> ProcedureResult:
    """Steps 1-6, then evaluation of M1, M2 and M3 on a fresh target set."""
    def step(name, fn, *args):
        try:
            return fn(*args)
        except (ContractError, NoConvergence, RuntimeError, ValueError) as exc:
            raise StepFailed(name, exc) from exc

    durations = sorted({float(d) for d in durations} | {scene.training_duration})
    region = step("operational-region", step_operational_region, scene)
    screen_map = step("locate", step_locate, scene)
    grid = step("grid", step_grid, scene, screen_map)
    datasets, reports = {}, {}
    for d in durations:
        datasets[d] = step("collect", step_collect, scene, screen_map, grid, d)
        reports[d] = deviation_report(datasets[d], region, scene.chain.names)
    m2, m3, cv = step("train", step_train, scene, datasets[scene.training_duration])
    evals = step("evaluate", step_evaluate, scene,
                 [M1Model(screen_map, grid), M2Model(m2, grid), M3Model(m3)])
    return ProcedureResult(scene, region, screen_map, grid, datasets, reports, m2, m3, cv,
                           {k: v[1] for k, v in evals.items()},
                           {k: v[0] for k, v in evals.items()})
