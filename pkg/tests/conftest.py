import time
from pathlib import Path

import numpy as np
import pytest

from touchcal.cli import main
from touchcal.emulator import PerturbationConfig
from touchcal.kinematics import JointSpec, KinematicChain, load_chain
from touchcal.pipeline import DATA_DIR, load_scene, run_full_procedure

GOLDEN = Path(__file__).parent / "golden"

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


def planar_chain(lengths=(0.3, 0.2)) -> KinematicChain:
    """Revolute joints about +z with links along +x."""
    z = np.array([0.0, 0.0, 1.0])
    joints = []
    offset = np.zeros(3)
    for i, _ in enumerate(lengths):
        joints.append(JointSpec(z, offset, np.eye(3), -np.pi, np.pi, f"j{i}"))
        offset = np.array([lengths[i], 0.0, 0.0])
    return KinematicChain(tuple(joints), fingertip_offset=offset)


@pytest.fixture(scope="session")
def nico():
    return load_chain(DATA_DIR / "nico_right_arm.json")


@pytest.fixture(scope="session")
def scene():
    return load_scene()


@pytest.fixture(scope="session")
def identity_scene(scene):
    return scene.with_perturbation(PerturbationConfig.identity(scene.chain.n_joints))


@pytest.fixture(scope="session")
def default_run(scene):
    """The full procedure on the shipped scene, with its wall time in seconds."""
    t0 = time.perf_counter()
    res = run_full_procedure(scene, (1, 2, 3))
    return res, time.perf_counter() - t0


@pytest.fixture(scope="session")
def identity_run(identity_scene):
    return run_full_procedure(identity_scene, (2,))


@pytest.fixture(scope="session")
def run_all_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run_all")
    assert main(["run-all", "--out", str(out)]) == 0
    return out
