"""
Tests for mode-comparison sweeps.
"""

import pytest
from pydantic import ValidationError

from drive_sscl import DriveSceneProcessor
from drive_sscl.core.synth import ScenarioKind
from drive_sscl.evaluation.benchmark import ModeSweep, SweepConfig, SweepReport, SweepRun
from drive_sscl.models import LearningMode

SCL, UNSUP, FSL = LearningMode.SCL, LearningMode.UNSUP, LearningMode.FSL


def _report(rows, seeds=(0, 1), **config):
    """Report from (seed, fraction, mode, mAP, top-1 SOIA) rows."""
    runs = [
        SweepRun(seed=s, labeled_fraction=f, mode=m, mean_ap=ap, top1_soia=d)
        for s, f, m, ap, d in rows
    ]
    return SweepReport(
        sweep=SweepConfig(seeds=list(seeds), labeled_fractions=[1.0, 0.1], **config), runs=runs
    )


def _seed_rows(seed, scl, unsup, fsl, scl_soia=1.0, fsl_soia=2.0):
    """One seed: ``scl`` and ``unsup`` are (mAP at 1.0, mAP at 0.1)."""
    return [
        (seed, 1.0, SCL, scl[0], None),
        (seed, 1.0, UNSUP, unsup[0], None),
        (seed, 0.1, SCL, scl[1], scl_soia),
        (seed, 0.1, UNSUP, unsup[1], None),
        (seed, 0.1, FSL, fsl, fsl_soia),
    ]


class TestSweepConfig:
    """Tests for SweepConfig."""

    def test_defaults(self):
        """Test five classes, three fractions and five seeds, four of which must agree."""
        config = SweepConfig()
        assert len(config.kinds) == 5
        assert config.out_of_class == 150
        assert config.labeled_fractions == [1.0, 0.5, 0.1]
        assert config.lowest_fraction == 0.1
        assert config.seeds_needed == 4

    def test_fractions_sorted_and_deduplicated(self):
        """Test fractions are kept largest first without repeats."""
        assert SweepConfig(labeled_fractions=[0.1, 1.0, 0.1]).labeled_fractions == [1.0, 0.1]

    def test_zero_fraction_rejected(self):
        """Test a sweep needs labels at every fraction."""
        with pytest.raises(ValidationError):
            SweepConfig(labeled_fractions=[0.0])

    def test_required_bounded_by_seeds(self):
        """Test more required seeds than seeds is rejected."""
        with pytest.raises(ValidationError):
            SweepConfig(seeds=[0, 1], required_seeds=3)

    def test_small_sweeps_need_every_seed(self):
        """Test fewer than five seeds leave no slack."""
        assert SweepConfig(seeds=[0, 1, 2]).seeds_needed == 3
        assert SweepConfig(seeds=list(range(10))).seeds_needed == 8


class TestSweepReport:
    """Tests for the seed counts of a sweep."""

    def test_all_comparisons_hold(self):
        """Test a sweep where SCL wins everywhere passes."""
        rows = _seed_rows(0, (0.8, 0.6), (0.5, 0.4), 0.3) + _seed_rows(1, (0.7, 0.5), (0.7, 0.2), 0.4)
        report = _report(rows)
        assert report.seed_counts() == {"scl_ge_unsup": 2, "scl_gt_fsl": 2, "scl_soia_le_fsl": 2}
        assert report.passed

    def test_unsupervised_win_at_one_fraction_fails_the_seed(self):
        """Test SCL must match UNSUP at every fraction for a seed to count."""
        rows = _seed_rows(0, (0.8, 0.3), (0.5, 0.4), 0.2) + _seed_rows(1, (0.8, 0.6), (0.5, 0.4), 0.2)
        report = _report(rows)
        assert report.semi_beats_unsupervised() == [1]
        assert report.checks()["scl_ge_unsup"] is False
        assert report.checks()["scl_gt_fsl"] is True

    def test_supervised_tie_does_not_count(self):
        """Test SCL must strictly exceed FSL."""
        rows = _seed_rows(0, (0.8, 0.5), (0.5, 0.4), 0.5) + _seed_rows(1, (0.8, 0.6), (0.5, 0.4), 0.2)
        assert _report(rows).semi_beats_supervised() == [1]

    def test_retrieval_tie_counts(self):
        """Test equal top-1 SOIA distances satisfy the ordering."""
        rows = _seed_rows(0, (0.8, 0.5), (0.5, 0.4), 0.2, 3.0, 3.0) + _seed_rows(
            1, (0.8, 0.6), (0.5, 0.4), 0.2, 5.0, 4.0
        )
        assert _report(rows).semi_retrieves_closer() == [0]

    def test_required_seeds_override(self):
        """Test one agreeing seed is enough when only one is required."""
        rows = _seed_rows(0, (0.8, 0.3), (0.5, 0.4), 0.2) + _seed_rows(1, (0.8, 0.6), (0.5, 0.4), 0.2)
        assert _report(rows, required_seeds=1).checks()["scl_ge_unsup"] is True


@pytest.fixture
def tiny_sweep():
    """Two classes, two fractions and one seed."""
    return SweepConfig(
        kinds=[ScenarioKind.CROSS_LEFT_TO_RIGHT, ScenarioKind.LEAD_VEHICLE_STOP],
        clips_per_class=4,
        out_of_class=2,
        validation_per_class=2,
        labeled_fractions=[1.0, 0.5],
        seeds=[3],
    )


class TestModeSweep:
    """Tests for ModeSweep."""

    def test_runs_every_combination(self, tiny_run_config, tiny_sweep):
        """Test SCL and UNSUP per fraction plus FSL at the smallest one."""
        report = ModeSweep(tiny_run_config, tiny_sweep).run()
        combos = [(r.labeled_fraction, r.mode) for r in report.runs]
        assert combos == [(1.0, SCL), (1.0, UNSUP), (0.5, SCL), (0.5, UNSUP), (0.5, FSL)]
        assert all(0.0 <= r.mean_ap <= 1.0 for r in report.runs)
        with_soia = [(r.labeled_fraction, r.mode) for r in report.runs if r.top1_soia is not None]
        assert with_soia == [(0.5, SCL), (0.5, FSL)]
        assert all(r.top1_soia >= 0.0 for r in report.runs if r.top1_soia is not None)
        assert set(report.checks()) == {"scl_ge_unsup", "scl_gt_fsl", "scl_soia_le_fsl"}

    def test_seed_rerun_identical(self, tiny_run_config, tiny_sweep):
        """Test a sweep rerun reproduces every number."""
        a = ModeSweep(tiny_run_config, tiny_sweep).run()
        b = ModeSweep(tiny_run_config, tiny_sweep).run()
        assert a.runs == b.runs

    def test_base_config_untouched(self, tiny_run_config, tiny_sweep):
        """Test per-run modes and seeds do not leak into the caller's config."""
        ModeSweep(tiny_run_config, tiny_sweep).run()
        assert tiny_run_config.train.mode == SCL
        assert tiny_run_config.train.seed == 0

    def test_through_processor(self, tiny_run_config, tiny_sweep):
        """Test the processor runs the same sweep."""
        report = DriveSceneProcessor(tiny_run_config, threads=1).compare_modes(tiny_sweep)
        assert len(report.runs) == 5
