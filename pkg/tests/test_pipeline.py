import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from touchcal.calibration import Region, lattice
from touchcal.kinematics import ContractError
from touchcal.pipeline import (
    DATA_DIR,
    QUADRANTS,
    STREAM_EVAL,
    CalibrationSample,
    DeviationReport,
    InsufficientData,
    M1Model,
    StepFailed,
    build_training_pairs,
    collect_dataset,
    dataset_header,
    deviation_report,
    eval_targets,
    generate_targets,
    load_dataset_csv,
    m1_targets,
    quadrant_of,
    reach_fraction,
    run_full_procedure,
    save_dataset_csv,
)

REGION = Region(0.07, 0.47, 0.02, 0.25)


def sample(target, hit, cmd=(0.3, 0.1, 0.02)):
    return CalibrationSample(np.asarray(target, float), np.asarray(cmd, float), np.zeros(7),
                             None if hit is None else np.asarray(hit, float), np.zeros(7),
                             2.0, "M1")


# ---------------------------------------------------------------- targets

class TestTargets:
    def test_thirty_six_pattern_is_the_six_by_six_lattice(self):
        t = generate_targets(REGION, "grid_pattern", 36, 0)
        assert np.array_equal(t.points, lattice(REGION, 6, 6))

    def test_pattern_prefers_nodes_along_the_long_side(self):
        pts = generate_targets(REGION, "grid_pattern", 130, 0).points
        assert len(np.unique(pts[:, 0])) == 13 and len(np.unique(pts[:, 1])) == 10

    @pytest.mark.parametrize("kind", ["random", "random_with_edges"])
    def test_seeded(self, kind):
        a = generate_targets(REGION, kind, 250, 5).points
        assert np.array_equal(a, generate_targets(REGION, kind, 250, 5).points)
        assert not np.array_equal(a, generate_targets(REGION, kind, 250, 6).points)

    def test_random_stays_inside_the_margin(self):
        pts = generate_targets(REGION, "random", 250, 1, margin=0.02).points
        inner = REGION.shrink(0.02)
        assert all(inner.contains(p, tol=0) for p in pts)

    def test_random_with_edges_uses_the_whole_region(self):
        pts = generate_targets(REGION, "random_with_edges", 250, 1).points
        assert all(REGION.contains(p, tol=0) for p in pts)
        near_edge = np.any(np.abs(pts - [REGION.x0, REGION.y0]) < 0.02, axis=1)
        assert near_edge.any()

    def test_bad_requests(self):
        with pytest.raises(ContractError):
            generate_targets(REGION, "random", 0, 0)
        with pytest.raises(ContractError):
            generate_targets(Region(0, 0.03, 0, 0.03), "random", 5, 0, margin=0.02)
        with pytest.raises(ContractError):
            generate_targets(REGION, "spiral", 5, 0)

    def test_m1_set_is_pattern_plus_random(self, scene):
        t = m1_targets(scene)
        assert t.shape == (250, 2)
        assert all(scene.region.contains(p) for p in t)

    def test_evaluation_set_is_disjoint_from_training(self, scene):
        train = {tuple(p) for p in m1_targets(scene)}
        assert not train & {tuple(p) for p in eval_targets(scene)}


# ---------------------------------------------------------------- collection

class TestCollect:
    def test_identity_pass_through_all_models(self, identity_run):
        for tag, rep in identity_run.eval_reports.items():
            assert rep.miss_count == 0, tag
            assert rep.overall["mean"] <= 0.2, tag

    def test_preserves_target_order(self, default_run):
        res = default_run[0]
        samples = res.m1_datasets[2.0]
        assert np.array_equal([s.target_screen for s in samples], m1_targets(res.scene))

    def test_ik_failure_recorded_without_contact(self, scene):
        class Far:
            tag = "M1"

            def predict(self, target):
                return np.array([5.0, 5.0, 5.0])

        samples = collect_dataset(Far(), scene.chain, scene.emulator(), [(0.2, 0.1)], 2.0)
        assert samples[0].contact_screen is None and not samples[0].ik_ok

    def test_unknown_duration(self, scene, default_run):
        res = default_run[0]
        with pytest.raises(ContractError):
            collect_dataset(M1Model(res.screen_map, res.grid), scene.chain, scene.emulator(),
                            [(0.2, 0.1)], 4.0)

    def test_default_contact_rate(self, default_run):
        samples = default_run[0].m1_datasets[2.0]
        rate = np.mean([s.contact_screen is not None for s in samples])
        assert rate >= 0.95

    def test_interior_miss_rate(self, default_run):
        res = default_run[0]
        inner = res.scene.region.shrink(float(res.scene.targets["margin"]))
        for d, samples in res.m1_datasets.items():
            interior = [s for s in samples if inner.contains(s.target_screen)]
            misses = sum(s.contact_screen is None for s in interior)
            assert misses <= 0.05 * len(interior), d

    def test_duration_ratio(self, default_run):
        reps = default_run[0].m1_reports
        assert 1.5 <= reps[1.0].overall["mean"] / reps[2.0].overall["mean"] <= 2.5


# ---------------------------------------------------------------- training pairs

class TestTrainingPairs:
    def test_field_extraction(self):
        s = [sample((0.0, 0.0), (0.1, 0.2), (0.35, 0.1, 0.02))] * 10
        X, Y, dropped = build_training_pairs(s)
        assert X[0].tolist() == [0.1, 0.2] and Y[0].tolist() == [0.35, 0.1, 0.02]
        assert dropped == 0

    def test_misses_are_dropped_and_counted(self):
        s = [sample((0, 0), (0.1, 0.2))] * 12 + [sample((0, 0), None)] * 3
        X, _, dropped = build_training_pairs(s)
        assert len(X) == 12 and dropped == 3

    def test_no_contacts_is_insufficient(self):
        with pytest.raises(InsufficientData):
            build_training_pairs([sample((0, 0), None)] * 30)

    def test_identity_pairs_follow_the_screen_map(self, identity_run):
        X, Y, _ = build_training_pairs(identity_run.m1_datasets[2.0])
        err = np.linalg.norm(identity_run.screen_map.to_sim(X) - Y[:, :2], axis=1)
        assert err.max() <= 2e-3


# ---------------------------------------------------------------- statistics

class TestQuadrants:
    def test_center_ties_to_q1(self):
        assert quadrant_of(REGION.center, REGION) == "Q1"

    def test_cell_centers(self):
        cx, cy = REGION.center
        w, h = REGION.width / 4, REGION.height / 4
        got = [quadrant_of((cx + sx * w, cy + sy * h), REGION)
               for sy in (-1, 1) for sx in (-1, 1)]
        assert got == ["Q1", "Q2", "Q3", "Q4"]

    def test_near_base_is_low_numbered(self, scene):
        base = scene.screen.to_screen(scene.chain.base_pose.translation)
        assert base[1] < scene.region.y0  # the base sits below the y = 0 edge
        assert quadrant_of((REGION.x0 + 0.01, REGION.y0 + 0.01), REGION) == "Q1"

    def test_outside_rejected(self):
        with pytest.raises(ContractError):
            quadrant_of((0.0, 0.0), REGION)


class TestReport:
    def test_counts_add_up(self, default_run):
        rep = default_run[0].eval_reports["M3"]
        assert sum(rep.quadrants[q]["n"] for q in QUADRANTS) == rep.overall["n"]
        assert rep.overall["n"] + rep.miss_count == rep.n_targets

    @settings(max_examples=25, deadline=None)
    @given(perm=st.permutations(range(250)))
    def test_order_invariant(self, default_run, perm):
        res = default_run[0]
        samples = res.eval_samples["M1"]
        a = deviation_report(samples, res.scene.region, res.scene.chain.names)
        b = deviation_report([samples[i] for i in perm], res.scene.region, res.scene.chain.names)
        assert a.to_json() == b.to_json()

    def test_json_round_trip(self, default_run):
        rep = default_run[0].eval_reports["M2"]
        again = DeviationReport.from_dict(json.loads(rep.to_json()))
        assert again == rep

    def test_misses_excluded_but_counted(self):
        s = [sample((0.1, 0.05), (0.11, 0.05)), sample((0.2, 0.1), None)]
        rep = deviation_report(s, REGION, [f"j{i}" for i in range(7)])
        assert rep.miss_count == 1
        assert rep.overall["n"] == 1 and rep.overall["mean"] == pytest.approx(1.0)

    def test_shoulders_dominate_joint_deviation(self, default_run):
        joints = default_run[0].m1_reports[2.0].joints
        top = sorted(joints, key=lambda n: joints[n]["median_abs"], reverse=True)[:2]
        assert set(top) == {"shld_z", "shld_x"}


# ---------------------------------------------------------------- persistence and procedure

class TestDatasetCsv:
    def test_header(self):
        h = dataset_header(7)
        assert h[:7] == ["model", "duration_s", "target_x", "target_y", "cmd_x", "cmd_y", "cmd_z"]
        assert h[7:14] == [f"j_s_{i}" for i in range(7)]
        assert h[14:17] == ["contact", "hit_x", "hit_y"]

    def test_round_trip_with_misses(self, default_run, tmp_path):
        samples = default_run[0].m1_datasets[1.0]
        assert any(s.contact_screen is None for s in samples)
        save_dataset_csv(samples, tmp_path / "d.csv")
        again = load_dataset_csv(tmp_path / "d.csv")
        save_dataset_csv(again, tmp_path / "e.csv")
        assert (tmp_path / "d.csv").read_bytes() == (tmp_path / "e.csv").read_bytes()
        miss_row = next(l for l in (tmp_path / "d.csv").read_text().splitlines()[1:]
                        if l.split(",")[14] == "0")
        assert miss_row.split(",")[15:17] == ["", ""]

    def test_shipped_example_matches_the_default_run(self, default_run, tmp_path):
        save_dataset_csv(default_run[0].m1_datasets[2.0], tmp_path / "m1_2s.csv")
        assert (tmp_path / "m1_2s.csv").read_bytes() == (DATA_DIR / "example_m1_2s.csv").read_bytes()


class TestProcedure:
    def test_runs_inside_a_minute(self, default_run):
        assert default_run[1] < 60

    def test_cv_folds(self, default_run):
        cv = default_run[0].cv
        assert cv["k"] == 5 and len(cv["M2"]) == len(cv["M3"]) == 5

    def test_failing_step_is_named(self, scene):
        bad = replace(scene, region=Region(0.0, 0.54, 0.0, 0.33),
                      screen=replace(scene.screen, pose=scene.screen.pose.translated((0, 0.4, 0))))
        with pytest.raises(StepFailed) as info:
            run_full_procedure(bad, (2,))
        assert info.value.step == "operational-region"

    def test_evaluation_shares_targets_across_models(self, default_run):
        ev = default_run[0].eval_samples
        for tag in ("M2", "M3"):
            assert np.array_equal([s.target_screen for s in ev[tag]],
                                  [s.target_screen for s in ev["M1"]])

    def test_reachable_fraction_of_screen(self, scene):
        assert reach_fraction(scene) >= 0.5

    def test_fresh_emulator_per_model(self, scene, default_run):
        # evaluating M1 again on a fresh emulator reproduces the stored samples exactly
        res = default_run[0]
        again = collect_dataset(M1Model(res.screen_map, res.grid), scene.chain,
                                scene.emulator(STREAM_EVAL), eval_targets(scene), 2.0,
                                press_depth=scene.press_depth)
        for a, b in zip(again, res.eval_samples["M1"]):
            assert np.array_equal(a.joints_readback, b.joints_readback)

    def test_m3_improves_on_m1(self, default_run):
        means = {t: r.overall["mean"] for t, r in default_run[0].eval_reports.items()}
        assert means["M3"] < means["M1"] and means["M3"] / means["M1"] <= 0.75

    @pytest.mark.xfail(strict=True, reason="M2 reaches the emulator's noise floor on this scene "
                       "and M3 does not undercut it (see the decisions ledger)")
    def test_full_error_ordering(self, default_run):
        means = {t: r.overall["mean"] for t, r in default_run[0].eval_reports.items()}
        assert means["M3"] <= means["M2"] <= means["M1"]

    def test_reports_expose_the_max(self, default_run):
        for rep in default_run[0].eval_reports.values():
            assert rep.overall["max"] >= rep.overall["median"]
