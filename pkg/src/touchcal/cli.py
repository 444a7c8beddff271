"""``touchcal`` command line: step-wise calibration commands and a full run.

Exit codes: 0 success, 2 bad input or missing prerequisite artifact,
3 numerical failure inside a step (the message names the step).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import report
from .calibration import AffineScreenMap, HeightGrid
from .emulator import NoContact
from .kinematics import ContractError, NoConvergence
from .neural import NetModel, TrainingDiverged
from .pipeline import (
    DEFAULT_SCENE,
    DeviationReport,
    InsufficientData,
    M1Model,
    M2Model,
    M3Model,
    Scene,
    StepFailed,
    deviation_report,
    error_map,
    load_dataset_csv,
    load_scene,
    run_full_procedure,
    save_dataset_csv,
    step_collect,
    step_evaluate,
    step_grid,
    step_locate,
    step_operational_region,
    step_train,
)

OUT_ENV = "TOUCHCAL_OUT"
DEFAULT_OUT = "touchcal_out"
NUMERICAL = (NoConvergence, NoContact, TrainingDiverged, InsufficientData)


class UsageError(Exception):
    """Bad input: exit code 2."""


class StepError(Exception):
    """A step failed numerically: exit code 3."""

    def __init__(self, step: str, cause: BaseException):
        super().__init__(f"step '{step}' failed: {cause}")
        self.step = step


class Layout:
    """Artifact paths under the output directory."""

    def __init__(self, root: Path):
        self.root = root
        self.screen_map = root / "screen_map.json"
        self.height_grid = root / "height_grid.csv"
        self.cv = root / "cv.json"
        self.table1 = root / "table1.csv"
        self.summary = root / "deviation_summary.csv"
        self.m1_durations = root / "m1_duration_summary.csv"
        self.joints = root / "joint_deviation.csv"
        self.error_grid = root / "m3_error_grid.csv"

    def dataset(self, tag: str, duration: float) -> Path:
        return self.root / "datasets" / f"{tag.lower()}_{duration:g}s.csv"

    def report(self, name: str) -> Path:
        return self.root / "reports" / f"{name}.json"

    def model(self, tag: str) -> Path:
        return self.root / "models" / f"{tag.lower()}.json"

    def scatter(self, duration: float) -> Path:
        return self.root / f"scatter_m1_{duration:g}s.svg"

    def prepare(self) -> None:
        for sub in ("", "datasets", "reports", "models"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)


def _require(path: Path) -> Path:
    if not path.exists():
        raise UsageError(f"missing prerequisite: {path}")
    return path


def _load_scene(args) -> Scene:
    path = Path(args.scene)
    if not path.exists():
        raise UsageError(f"scene file not found: {path}")
    try:
        return load_scene(path, args.seed)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: invalid scene: {exc!r}") from exc


def _load_json_artifact(path: Path, loader):
    _require(path)
    try:
        return loader(path)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: unreadable artifact: {exc!r}") from exc


def _run(step: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StepFailed as exc:
        raise StepError(exc.step, exc.cause) from exc
    except NUMERICAL as exc:
        raise StepError(step, exc) from exc


def _durations(args, scene: Scene) -> list[float]:
    ds = args.duration or [1.0, 2.0, 3.0]
    return sorted({float(d) for d in ds} | {scene.training_duration})


# ---------------------------------------------------------------- writers

def _write_collect(lay: Layout, scene: Scene, duration: float, samples) -> None:
    save_dataset_csv(samples, lay.dataset("M1", duration))
    rep = deviation_report(samples, scene.region, scene.chain.names)
    report.write_json(lay.report(f"m1_{duration:g}s"), rep.to_dict())
    # the figure shows only the patterned (lattice) part of the target set
    n_pattern = int(scene.targets["m1_pattern"])
    base = report.base_on_screen(scene.screen, scene.chain.base_pose.translation)
    report.emit_scatter_svg(samples[:n_pattern], scene.screen, lay.scatter(duration), base,
                            title=f"M1 hits vs lattice targets, {duration:g} s moves")


def _write_m1_summaries(lay: Layout, scene: Scene, durations: Sequence[float]) -> None:
    reps = []
    for d in durations:
        path = lay.report(f"m1_{d:g}s")
        if path.exists():
            reps.append(DeviationReport.from_dict(json.loads(path.read_text())))
    report.write_summary_csv(reps, lay.m1_durations)
    report.write_joint_csv(reps, lay.joints, scene.chain.names)


def _write_train(lay: Layout, m2: NetModel, m3: NetModel, cv: dict) -> None:
    m2.save(lay.model("M2"))
    m3.save(lay.model("M3"))
    report.write_json(lay.cv, cv)


def _write_eval(lay: Layout, evals: dict) -> None:
    reps = {}
    for tag, (rep, samples) in evals.items():
        save_dataset_csv(samples, lay.dataset(f"eval_{tag}", rep.duration))
        report.write_json(lay.report(f"eval_{tag.lower()}"), rep.to_dict())
        reps[tag] = rep
    report.write_table1_csv(reps, lay.table1)
    report.write_summary_csv(list(reps.values()), lay.summary)


# ---------------------------------------------------------------- commands

def cmd_locate(args, scene: Scene, lay: Layout) -> None:
    _run("operational-region", step_operational_region, scene)
    _run("locate", step_locate, scene).save(lay.screen_map)


def cmd_grid(args, scene: Scene, lay: Layout) -> None:
    sm = _load_json_artifact(lay.screen_map, AffineScreenMap.load)
    _run("grid", step_grid, scene, sm).save_csv(lay.height_grid)


def _load_grid(lay: Layout) -> HeightGrid:
    _require(lay.height_grid)
    try:
        return HeightGrid.load_csv(lay.height_grid)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{lay.height_grid}: unreadable height grid: {exc!r}") from exc


def cmd_collect(args, scene: Scene, lay: Layout) -> None:
    sm = _load_json_artifact(lay.screen_map, AffineScreenMap.load)
    grid = _load_grid(lay)
    durations = _durations(args, scene)
    for d in durations:
        _write_collect(lay, scene, d, _run("collect", step_collect, scene, sm, grid, d))
    _write_m1_summaries(lay, scene, durations)


def cmd_train(args, scene: Scene, lay: Layout) -> None:
    path = Path(args.dataset) if args.dataset else lay.dataset("M1", scene.training_duration)
    _require(path)
    try:
        samples = load_dataset_csv(path)
    except (KeyError, IndexError, ValueError) as exc:
        raise UsageError(f"{path}: unreadable dataset: {exc!r}") from exc
    m2, m3, cv = _run("train", step_train, scene, samples)
    _write_train(lay, m2, m3, cv)


def _selected(args) -> list[str]:
    tags = [t.strip().upper() for t in args.models.split(",") if t.strip()]
    bad = sorted(set(tags) - {"M1", "M2", "M3"})
    if bad or not tags:
        raise UsageError(f"--models takes a comma list of M1, M2, M3 (got {args.models!r})")
    return [t for t in ("M1", "M2", "M3") if t in tags]


def cmd_eval(args, scene: Scene, lay: Layout) -> None:
    sm = _load_json_artifact(lay.screen_map, AffineScreenMap.load)
    grid = _load_grid(lay)
    models = []
    for tag in _selected(args):
        if tag == "M1":
            models.append(M1Model(sm, grid))
        elif tag == "M2":
            models.append(M2Model(_load_json_artifact(lay.model("M2"), NetModel.load), grid))
        else:
            models.append(M3Model(_load_json_artifact(lay.model("M3"), NetModel.load)))
    _write_eval(lay, _run("evaluate", step_evaluate, scene, models))
    m3 = [m for m in models if m.tag == "M3"]
    if m3:
        report.write_error_grid_csv(_run("error-map", error_map, scene, m3[0]), lay.error_grid)


def cmd_run_all(args, scene: Scene, lay: Layout) -> None:
    durations = _durations(args, scene)
    res = _run("run-all", run_full_procedure, scene, durations)
    res.screen_map.save(lay.screen_map)
    res.grid.save_csv(lay.height_grid)
    for d in durations:
        _write_collect(lay, scene, d, res.m1_datasets[d])
    _write_m1_summaries(lay, scene, durations)
    _write_train(lay, res.m2, res.m3, res.cv)
    evals = {tag: (res.eval_reports[tag], res.eval_samples[tag]) for tag in res.eval_reports}
    _write_eval(lay, evals)
    m3 = M3Model(res.m3)
    report.write_error_grid_csv(_run("error-map", error_map, scene, m3), lay.error_grid)


COMMANDS = {"locate": cmd_locate, "grid": cmd_grid, "collect": cmd_collect,
            "train": cmd_train, "eval": cmd_eval, "run-all": cmd_run_all}


def _duration(v: str) -> float:
    d = float(v)
    if d not in (1.0, 2.0, 3.0):
        raise argparse.ArgumentTypeError("duration must be 1, 2 or 3")
    return d


def _seed(v: str) -> int:
    s = int(v)
    if not 0 <= s < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return s


def build_parser() -> argparse.ArgumentParser:
    # the shared flags live on a parent parser so they may follow the subcommand;
    # SUPPRESS keeps a subparser from clobbering a value given before it
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scene", default=argparse.SUPPRESS,
                        help="scene JSON (default: the bundled scene)")
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--seed", type=_seed, default=argparse.SUPPRESS,
                        help="override the scene seed")
    common.add_argument("--duration", type=_duration, action="append", default=argparse.SUPPRESS,
                        help="movement duration in seconds; repeatable")

    p = argparse.ArgumentParser(prog="touchcal", parents=[common],
                                description="Touchscreen-feedback arm calibration on an emulated robot.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("locate", parents=[common], help="locate the screen from three guided touches")
    sub.add_parser("grid", parents=[common], help="measure the 6x6 contact-height grid")
    sub.add_parser("collect", parents=[common], help="collect M1 touches for each duration")
    t = sub.add_parser("train", parents=[common], help="fit M2 and M3 with 5-fold CV")
    t.add_argument("--dataset", help="dataset CSV (default: the collected M1 set)")
    e = sub.add_parser("eval", parents=[common], help="evaluate models on fresh targets")
    e.add_argument("--models", default="M1,M2,M3", help="comma list (default M1,M2,M3)")
    sub.add_parser("run-all", parents=[common], help="the full procedure with every artifact")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    args.scene = getattr(args, "scene", str(DEFAULT_SCENE))
    args.seed = getattr(args, "seed", None)
    args.duration = getattr(args, "duration", None)
    args.dataset = getattr(args, "dataset", None)
    args.models = getattr(args, "models", "M1,M2,M3")
    out = getattr(args, "out", None) or os.environ.get(OUT_ENV) or DEFAULT_OUT
    lay = Layout(Path(out))
    try:
        scene = _load_scene(args)
        lay.prepare()
        COMMANDS[args.command](args, scene, lay)
    except UsageError as exc:
        print(f"touchcal: error: {exc}", file=sys.stderr)
        return 2
    except StepError as exc:
        print(f"touchcal: {exc}", file=sys.stderr)
        return 3
    except (ContractError, OSError) as exc:
        print(f"touchcal: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
