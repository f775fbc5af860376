import math

import numpy as np
import pytest

from mada import data, nn, pipeline
from mada.errors import ConfigError, NonFiniteError
from mada.pipeline import ExperimentConfig, SeedRun, metrics_from_labels
from oracles import naive_iou

SMALL = dict(n_source=40, n_target=40, n_eval=20, hidden=8, d_lat=4, disc_hidden=4,
             k_source=3, v_target=3, kmeans_n_init=2, warmup_epochs=2, stage2_epochs=5,
             batch_size=10, seeds=(0,))


def small_cfg(**kw):
    return ExperimentConfig(**{**SMALL, **kw})


@pytest.fixture(scope="module")
def run():
    return SeedRun(small_cfg(), 0)


class TestMetrics:
    def test_hand_case(self):
        m = metrics_from_labels(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]), 2)
        np.testing.assert_allclose(m.per_class_iou, [0.5, 2 / 3])
        assert m.miou == pytest.approx(7 / 12, rel=1e-15)
        assert m.confusion.tolist() == [[1, 1], [0, 2]]

    def test_perfect_prediction(self):
        t = np.random.default_rng(0).integers(0, 4, size=(5, 3, 3))
        m = metrics_from_labels(t, t, 4)
        assert m.miou == 1.0 and np.all(m.per_class_iou == 1.0)

    def test_shifted_prediction_scores_zero(self):
        t = np.tile(np.arange(4), 6)
        m = metrics_from_labels(t, (t + 1) % 4, 4)
        assert m.miou == 0.0

    def test_absent_class_excluded(self):
        m = metrics_from_labels(np.array([0, 1, 1]), np.array([0, 1, 0]), 3)
        assert m.excluded == [2] and np.isnan(m.per_class_iou[2])
        assert m.miou == pytest.approx((0.5 + 0.5) / 2)
        assert m.to_dict()["per_class_iou"][2] is None

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_counting_oracle(self, seed):
        rng = np.random.default_rng(seed)
        t, p = rng.integers(0, 4, size=50), rng.integers(0, 4, size=50)
        np.testing.assert_allclose(metrics_from_labels(t, p, 4).per_class_iou, naive_iou(t, p, 4))


class TestConfig:
    def test_defaults_validate(self):
        ExperimentConfig().validate()

    def test_parse_and_dump_round_trip(self, tmp_path):
        cfg = pipeline.parse_overrides(["budget=0.1", "seeds=3,4", "nearest_first=true", "variant=M2"])
        assert cfg.budget == 0.1 and cfg.seeds == (3, 4) and cfg.nearest_first and cfg.variant == "M2"
        path = tmp_path / "c.cfg"
        path.write_text("# comment\n" + pipeline.dump_config(cfg))
        again = pipeline.load_config(path)
        assert again == cfg and again.config_hash() == cfg.config_hash()

    @pytest.mark.parametrize("pair, field", [
        ("nope=1", "nope"), ("budget=abc", "budget"), ("budget=2", "budget"),
        ("variant=M9", "variant"), ("alpha=1.0", "alpha"), ("k_source=0", "k_source"),
        ("seeds=", "seeds"), ("strategy=greedy", "strategy"),
    ])
    def test_bad_values_name_the_field(self, pair, field):
        with pytest.raises(ConfigError) as exc:
            pipeline.parse_overrides([pair])
        assert exc.value.field == field

    def test_malformed_line(self, tmp_path):
        (tmp_path / "c.cfg").write_text("budget 0.1\n")
        with pytest.raises(ConfigError, match="line 1"):
            pipeline.load_config(tmp_path / "c.cfg")

    def test_hash_changes_with_values(self):
        assert small_cfg().config_hash() != small_cfg(budget=0.1).config_hash()

    def test_variant_flags(self):
        v = pipeline.VARIANTS
        assert not any(v["M0"].values())
        assert v["M1"] == dict(active=True, dis=False, ema=False, pseudo=False)
        assert all(v["M4"].values())
        for a, b in zip(("M1", "M2", "M3"), ("M2", "M3", "M4")):
            assert sum(v[b].values()) == sum(v[a].values()) + 1


class TestWarmup:
    def test_zero_epochs_passes_init_through(self, run):
        cfg = small_cfg(warmup_epochs=0)
        out = pipeline.run_warmup(cfg, run.source, run.target, 0)
        init = nn.init_params(4, cfg.hidden, cfg.d_lat, 4, cfg.disc_hidden, seed=0)
        assert out.params.equal(init) and out.log == []
        assert out.source_vectors.values.shape == (40, 4 * cfg.d_lat)

    def test_zero_adv_weight_matches_source_only(self, run):
        cfg = small_cfg(adv_weight=0.0)
        a = pipeline.run_warmup(cfg, run.source, run.target, 0).params
        b = pipeline.run_warmup(cfg, run.source, data.empty_dataset("target", 4, 8, 8, 4), 0).params
        for k in ("enc0.W", "enc1.W", "cls.W", "cls.b"):
            np.testing.assert_array_equal(a.arrays[k], b.arrays[k])

    def test_log_records(self, run):
        log = run.warmup.log
        assert len(log) == 2 * 4 and log[0]["lr"] == 0.5
        assert all(math.isfinite(r["total"]) for r in log)

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_divergence_aborts(self, run):
        with pytest.raises(NonFiniteError):
            pipeline.run_warmup(small_cfg(warmup_lr=1e308), run.source, run.target, 0)


class TestStage1:
    def test_partition_exact(self, run):
        s1 = run.stage1()
        assert len(s1.labeled_ids) == 2  # ceil(0.05 * 40)
        assert set(s1.labeled_ids).isdisjoint(s1.unlabeled_ids)
        assert sorted(s1.labeled_ids + s1.unlabeled_ids) == sorted(run.target.ids.tolist())

    def test_five_percent_of_default_pool(self):
        run = SeedRun(ExperimentConfig(warmup_epochs=0, n_source=40, n_eval=0), 0)
        assert len(run.stage1().labeled_ids) == 20

    def test_random_is_reproducible(self, run):
        a = pipeline.run_stage1(run.warmup.params, run.warmup.source_vectors, run.target,
                                run.cfg, 0, "random")
        b = pipeline.run_stage1(run.warmup.params, run.warmup.source_vectors, run.target,
                                run.cfg, 0, "random")
        assert a.labeled_ids == b.labeled_ids and a.source_anchors is None

    def test_every_strategy_scores_whole_pool(self, run):
        for s in ("multi_anchor", "random", "entropy", "adversarial", "aada"):
            out = run.stage1(strategy=s)
            assert len(out.selection.scores) == 40
            assert all(math.isfinite(v) for v in out.selection.scores.values())

    def test_source_anchors_count(self, run):
        assert run.stage1().source_anchors.K == 3


class TestStage2:
    def test_step3_zero_epochs_returns_step1(self, run):
        # stage2_epochs=1 with fraction 1.0: the whole budget is step 1
        cfg = small_cfg(stage2_epochs=2, step1_fraction=1.0)
        out = pipeline.run_stage2(run.warmup.params, run.source, run.target,
                                  run.stage1().labeled_ids, cfg, 0, "M4")
        assert out.target_anchors is None
        assert out.params.equal(out.step1_params)
        assert all(r["phase"] == "step1" for r in out.log)

    def test_m1_is_continued_step1(self, run):
        labeled = run.stage1().labeled_ids
        a = pipeline.run_stage2(run.warmup.params, run.source, run.target, labeled,
                                small_cfg(), 0, "M1")
        b = pipeline.run_stage2(run.warmup.params, run.source, run.target, labeled,
                                small_cfg(step1_fraction=1.0), 0, "M1")
        assert a.params.equal(b.params)

    def test_anchors_stay_bounded_and_drift_obeys_ema_bound(self, run):
        cfg = small_cfg()
        out = pipeline.run_stage2(run.warmup.params, run.source, run.target,
                                  run.stage1().labeled_ids, cfg, 0, "M4")
        a = out.target_anchors.anchors
        assert np.all(np.isfinite(a))
        # image vectors are means of tanh features, so their hull lies in [-1, 1]^D
        assert np.all(np.abs(a) <= 1.0 + 1e-12)
        step3 = [r for r in out.log if r["phase"] == "step3"]
        n_updates = sum(r["counts"]["active"] + r["counts"]["unlabeled"] for r in step3)
        diameter = 2.0 * math.sqrt(a.shape[1])
        assert step3[-1]["anchor_drift"] <= (1 - cfg.alpha) * n_updates * diameter
        assert step3[-1]["anchor_drift"] > 0

    def test_no_ema_keeps_initial_anchors(self, run):
        out = pipeline.run_stage2(run.warmup.params, run.source, run.target,
                                  run.stage1().labeled_ids, small_cfg(), 0, "M2")
        np.testing.assert_array_equal(out.target_anchors.anchors, out.initial_anchors.anchors)

    def test_full_budget_drops_pseudo_term(self, run):
        out = pipeline.run_stage2(run.warmup.params, run.source, run.target,
                                  run.target.ids.tolist(), small_cfg(), 0, "M4")
        assert all(r["pseudo"] == 0.0 for r in out.log)

    def test_log_fields(self, run):
        out = pipeline.run_stage2(run.warmup.params, run.source, run.target,
                                  run.stage1().labeled_ids, small_cfg(), 0, "M4")
        assert len(out.log) == 5 * 4
        assert [r["phase"] for r in out.log].count("step1") == 4
        assert {"lr", "seg_source", "dis_t", "pseudo", "total", "anchor_drift"} <= set(out.log[0])

    def test_deterministic(self, run):
        labeled = run.stage1().labeled_ids
        a = pipeline.run_stage2(run.warmup.params, run.source, run.target, labeled, small_cfg(), 0, "M4")
        b = pipeline.run_stage2(run.warmup.params, run.source, run.target, labeled, small_cfg(), 0, "M4")
        assert a.params.equal(b.params)


class TestHarness:
    def test_ablation_rows(self, tmp_path):
        rows = pipeline.run_ablation(small_cfg(seeds=(0, 1)))
        assert [(r["variant"], r["seed"]) for r in rows] == [
            (v, s) for s in (0, 1) for v in pipeline.LADDER]
        mu = [r for r in rows if r["variant"] == "Mu"]
        assert all(r["n_labeled"] == 40 for r in mu)
        pipeline.write_csv(rows, tmp_path / "a.csv")
        pipeline.write_csv(pipeline.run_ablation(small_cfg(seeds=(0, 1))), tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_parallel_matches_serial(self):
        cfg = small_cfg(seeds=(0, 1))
        serial = pipeline.run_ablation(cfg, ("M0", "M1"))
        parallel = pipeline.run_ablation(cfg.replace(n_jobs=2), ("M0", "M1"))
        assert serial == parallel

    def test_sweeps_shape(self):
        cfg = small_cfg(k_grid=(1, 3), budget_grid=(0.05, 1.0))
        out = pipeline.run_sweeps(cfg)
        assert [r["k_source"] for r in out["anchors"]] == [1, 3]
        assert [r["budget"] for r in out["budget"]] == [0.05, 1.0]
        assert out["budget"][-1]["variant"] == "Mu"
        assert {r["strategy"] for r in out["strategy"]} == {
            "multi_anchor", "random", "entropy", "adversarial", "aada"}
        assert all(r["variant"] == "M1" for r in out["strategy"])

    def test_unknown_sweep(self):
        with pytest.raises(ConfigError):
            pipeline.run_sweeps(small_cfg(), ("colour",))

    def test_median_by(self):
        rows = [{"v": "a", "miou": 1.0}, {"v": "a", "miou": 3.0}, {"v": "b", "miou": 2.0}]
        assert pipeline.median_by(rows, "v") == {"a": 2.0, "b": 2.0}


def test_warmup_length_keeps_selection_composition():
    # which exclusive images win shifts with warm-up length, the scene mix does not
    shares = []
    for epochs in (2, 20, 40):
        r = SeedRun(ExperimentConfig(warmup_epochs=epochs, n_source=200, n_target=200, n_eval=0), 0)
        shares.append(r.exclusive_capture(r.stage1().labeled_ids))
    assert shares == [1.0, 1.0, 1.0]
