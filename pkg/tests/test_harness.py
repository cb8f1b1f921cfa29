import csv
import dataclasses

import pytest

from slice_arena.adversary import AttackConfig
from slice_arena.harness import (ATTACKED_CHECKPOINT, MODEL_CHECKPOINT,
                                 SCENARIO_NAMES, MissingCheckpointError,
                                 compare, compare_table, run_scenario, sweep,
                                 train_defense_ensemble, train_single_models,
                                 with_arrival_mean, write_results)
from slice_arena.metrics import aggregate

from conftest import make_dc, make_scenario, make_slice


@pytest.fixture(scope="module")
def small_cfg():
    return make_scenario(
        datacenters=(make_dc("dc1"), make_dc("dc2")),
        slices=(make_slice("s1", priority=2.0, demand=(2.0, 7.0, 30.0),
                           arrival_mean=6.0, departure_prob=0.3),
                make_slice("s2", priority=3.0, demand=(3.0, 5.0, 50.0),
                           arrival_mean=6.0, departure_prob=0.3)),
        kappa=1000.0, m_penalty=150_000.0, horizon=40)


@pytest.fixture(scope="module")
def artifacts(small_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("artifacts")
    train_single_models(small_cfg, out, seed=0, total_env_steps=4096)
    train_defense_ensemble(small_cfg, out, seed=0, total_env_steps=2048,
                           gate_ratio=0.0)
    return out


SEEDS = (11, 12, 13)


class TestPolicyFreeScenarios:
    def test_random_admission_strictly_inside_unit_interval(self, small_cfg):
        result = run_scenario("random", small_cfg, seeds=SEEDS)
        assert 0.0 < result.aggregate.admission_rate < 1.0

    def test_identical_traffic_across_scenarios(self, small_cfg):
        random = run_scenario("random", small_cfg, seeds=SEEDS)
        optimal = run_scenario("optimal", small_cfg, seeds=SEEDS)
        for a, b in zip(random.records, optimal.records):
            assert a.seed == b.seed
            arrived_a = [(s.slot, {k: v.arrived for k, v in s.per_slice.items()})
                         for s in a.slot_log]
            arrived_b = [(s.slot, {k: v.arrived for k, v in s.per_slice.items()})
                         for s in b.slot_log]
            assert arrived_a == arrived_b

    def test_exhaustive_beats_random_on_shared_traffic(self, small_cfg):
        random = run_scenario("random", small_cfg, seeds=SEEDS)
        optimal = run_scenario("optimal", small_cfg, seeds=SEEDS)
        assert optimal.aggregate.admission_rate >= \
            random.aggregate.admission_rate
        assert optimal.aggregate.mean_slot_reward > \
            random.aggregate.mean_slot_reward

    def test_per_seed_metrics_align_with_records(self, small_cfg):
        result = run_scenario("random", small_cfg, seeds=SEEDS)
        assert result.seeds == SEEDS
        assert len(result.per_seed) == 3
        for record, metrics in zip(result.records, result.per_seed):
            assert aggregate([record], small_cfg) == metrics

    def test_unknown_scenario_rejected(self, small_cfg):
        with pytest.raises(ValueError, match="unknown scenario"):
            run_scenario("greedy", small_cfg, seeds=SEEDS)


class TestArtifactHandling:
    def test_both_checkpoints_written(self, artifacts):
        assert (artifacts / MODEL_CHECKPOINT).is_file()
        assert (artifacts / ATTACKED_CHECKPOINT).is_file()
        assert (artifacts / "ensemble" / "manifest.txt").is_file()

    @pytest.mark.parametrize("name", ["ppo-clean", "ppo-attacked", "ppo-mtd"])
    def test_missing_artifacts_raise(self, small_cfg, tmp_path, name):
        with pytest.raises(MissingCheckpointError):
            run_scenario(name, small_cfg, seeds=SEEDS, artifacts=None)
        with pytest.raises(MissingCheckpointError):
            run_scenario(name, small_cfg, seeds=SEEDS,
                         artifacts=tmp_path / "empty")


class TestPolicyScenarios:
    def test_clean_policy_sees_no_attacks(self, small_cfg, artifacts):
        result = run_scenario("ppo-clean", small_cfg, seeds=SEEDS,
                              artifacts=artifacts)
        assert result.aggregate.attacked_fraction == 0.0
        assert all(r.model_index == 0 for r in result.records)

    def test_attacked_policy_reports_forged_fraction(self, small_cfg,
                                                     artifacts):
        attack = AttackConfig(attack_probability=0.25, seed=0)
        result = run_scenario("ppo-attacked", small_cfg, seeds=SEEDS,
                              artifacts=artifacts, attack=attack)
        assert result.aggregate.attacked_fraction == \
            pytest.approx(0.25, abs=0.05)

    def test_mtd_rows_carry_member_indices(self, small_cfg, artifacts,
                                           tmp_path):
        result = run_scenario("ppo-mtd", small_cfg, seeds=SEEDS,
                              artifacts=artifacts)
        metrics_path, _ = write_results([result], tmp_path, small_cfg)
        members = {int(r["model_index"])
                   for r in csv.DictReader(metrics_path.open())}
        assert members <= {-1, 0, 1, 2, 3}
        assert len(members - {-1}) >= 2

    def test_mtd_selection_seed_changes_schedule(self, small_cfg, artifacts):
        a = run_scenario("ppo-mtd", small_cfg, seeds=SEEDS,
                         artifacts=artifacts, selection_seed=0)
        b = run_scenario("ppo-mtd", small_cfg, seeds=SEEDS,
                         artifacts=artifacts, selection_seed=1)
        assert a.records[0].member_by_slot != b.records[0].member_by_slot


class TestCsvContracts:
    def test_reruns_are_byte_identical(self, small_cfg, artifacts, tmp_path):
        for sub in ("a", "b"):
            result = run_scenario("ppo-attacked", small_cfg, seeds=SEEDS,
                                  artifacts=artifacts)
            write_results([result], tmp_path / sub, small_cfg)
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == \
               (tmp_path / "b" / "metrics.csv").read_bytes()
        assert (tmp_path / "a" / "summary.csv").read_bytes() == \
               (tmp_path / "b" / "summary.csv").read_bytes()

    def test_accounting_identity_per_slice(self, small_cfg, tmp_path):
        result = run_scenario("random", small_cfg, seeds=SEEDS)
        metrics_path, _ = write_results([result], tmp_path, small_cfg)
        totals = {}
        for row in csv.DictReader(metrics_path.open()):
            t = totals.setdefault(row["slice_id"], [0, 0, 0, 0])
            t[0] += int(row["arrived"])
            t[1] += int(row["admitted"])
            t[2] += int(row["rejected"])
            t[3] += int(row["infeasible"])
        assert set(totals) == {"s1", "s2"}
        for arrived, admitted, rejected, infeasible in totals.values():
            assert arrived == admitted + rejected + infeasible

    def test_normalized_power_within_unit_interval(self, small_cfg, tmp_path):
        result = run_scenario("random", small_cfg, seeds=SEEDS)
        metrics_path, _ = write_results([result], tmp_path, small_cfg)
        for row in csv.DictReader(metrics_path.open()):
            assert 0.0 <= float(row["normalized_power"]) <= 1.0


class TestSweep:
    def test_single_point_matches_run_scenario(self, small_cfg):
        points = sweep(small_cfg, arrival_values=(6.0,),
                       scenarios=("random",), seeds=SEEDS)
        assert len(points) == 1
        direct = run_scenario("random", small_cfg, seeds=SEEDS)
        assert points[0].result.aggregate == direct.aggregate

    def test_labels_carry_arrival(self, small_cfg):
        points = sweep(small_cfg, arrival_values=(2.0, 6.0),
                       scenarios=("random",), seeds=SEEDS[:1])
        labels = [p.result.records[0].scenario for p in points]
        assert labels == ["random@a2", "random@a6"]

    def test_optimal_monotone_in_arrival(self, small_cfg):
        points = sweep(small_cfg, arrival_values=(2.0, 6.0, 12.0),
                       scenarios=("optimal",), seeds=SEEDS)
        admissions = [p.result.aggregate.admission_rate for p in points]
        powers = [p.result.aggregate.mean_normalized_power for p in points]
        assert admissions == sorted(admissions, reverse=True)
        assert powers == sorted(powers)

    def test_summary_has_one_row_per_point(self, small_cfg, tmp_path):
        points = sweep(small_cfg, arrival_values=(2.0, 6.0),
                       scenarios=("random", "optimal"), seeds=SEEDS[:1])
        _, summary_path = write_results([p.result for p in points],
                                        tmp_path, small_cfg)
        rows = list(csv.DictReader(summary_path.open()))
        assert [r["scenario"] for r in rows] == \
            ["random@a2", "optimal@a2", "random@a6", "optimal@a6"]

    def test_with_arrival_mean_replaces_every_slice(self, small_cfg):
        swapped = with_arrival_mean(small_cfg, 3.5)
        assert all(s.arrival_mean == 3.5 for s in swapped.slices)
        assert swapped.kappa == small_cfg.kappa
        assert with_arrival_mean(small_cfg, 6.0) == small_cfg

    def test_invalid_arrival_rejected(self, small_cfg):
        with pytest.raises(ValueError):
            with_arrival_mean(small_cfg, -1.0)


class TestCompare:
    def test_all_five_scenarios_in_order(self, small_cfg, artifacts):
        results = compare(small_cfg, artifacts, seeds=SEEDS[:2])
        assert [r.name for r in results] == list(SCENARIO_NAMES)
        table = compare_table(results)
        for name in SCENARIO_NAMES:
            assert name in table
        optimal_line = next(line for line in table.splitlines()
                            if line.startswith("optimal"))
        assert "1.0000" in optimal_line
