"""Acceptance suite: one test per acceptance criterion, each at its stated
tolerance, each emitting a single PASS/FAIL line (run with ``-s`` or read the
captured output / the pytest -v verdict per test)."""

import json
import time

import numpy as np
import pytest
import torch

from deskdet.cli import ABLATION_ROWS, EXIT_OK, main
from deskdet.cfc_crb import ContextCalibration, cascaded_pyramid_context
from deskdet.config import (ATFConfig, ModelConfig, RunConfig, SceneSpec)
from deskdet.data import export_dataset
from deskdet.losses import atf_loss, binary_cross_entropy, box_regression_loss, dfl_loss
from deskdet.metrics import IOU_THRESHOLDS, evaluate, nms
from deskdet.model import build_model
from deskdet.sfc_g2 import SpatialFusion, grouped_warp
from deskdet.sppf_lska import SPPFLSKA
from deskdet.train import evaluate_model, train

from conftest import central_fd_rel_error
from test_metrics import random_instance, ref_evaluate, ref_nms


def check(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------- gradient suite


class TestGradientSuite:
    """Analytic vs central-difference gradients at double precision on inputs
    no larger than 2x8x16x16; modules <= 1e-4, scalar losses <= 1e-6; whole
    suite under 60 s."""

    def test_gradient_suite(self):
        t0 = time.monotonic()
        torch.manual_seed(0)
        worst = {}

        x = torch.randn(2, 8, 16, 16, dtype=torch.float64, requires_grad=True)
        m = SPPFLSKA(8, 8).double().eval()
        w = torch.randn(2, 8, 16, 16, dtype=torch.float64)
        worst["sppf_lska"] = central_fd_rel_error(
            lambda: (m(x) * w).sum(), [x], max_entries=24)

        m2 = ContextCalibration(8, bins=(1, 2, 3)).double().eval()
        x2 = torch.randn(2, 8, 16, 16, dtype=torch.float64, requires_grad=True)
        w2 = torch.randn(2, 8, 16, 16, dtype=torch.float64)
        worst["cfc_crb"] = central_fd_rel_error(
            lambda: (m2(x2) * w2).sum(), [x2], max_entries=24)

        m3 = SpatialFusion(8, 8, 8, groups=2).double().eval()
        with torch.no_grad():  # move the warp off its zero-displacement init
            m3.disp.head.weight.normal_(0, 0.02)
            m3.gate_conv.weight.normal_(0, 0.5)
        hi = torch.randn(2, 8, 8, 8, dtype=torch.float64, requires_grad=True)
        lo = torch.randn(2, 8, 16, 16, dtype=torch.float64, requires_grad=True)
        w3 = torch.randn(2, 8, 16, 16, dtype=torch.float64)
        worst["sfc_g2"] = central_fd_rel_error(
            lambda: (m3(hi, lo) * w3).sum(), [hi, lo], max_entries=16)

        p = (torch.rand(40, dtype=torch.float64) * 0.9 + 0.05).requires_grad_()
        tgt = (torch.rand(40) > 0.5).double()
        cfg = ATFConfig(gamma=2.0, tau=0.3, tau_mode="fixed")
        worst["atf_loss"] = central_fd_rel_error(
            lambda: atf_loss(p, tgt, cfg).sum(), [p], eps=1e-7)

        logits = torch.randn(6, 16, dtype=torch.float64, requires_grad=True)
        offs = torch.rand(6, dtype=torch.float64) * 14.5
        worst["dfl_loss"] = central_fd_rel_error(
            lambda: dfl_loss(logits, offs).sum(), [logits], eps=1e-6)

        # parameterize predictions as (x1, y1, w, h) so every FD perturbation
        # keeps the box well-formed
        pred = (torch.rand(6, 4, dtype=torch.float64) * 10).requires_grad_()
        gt = torch.rand(6, 4, dtype=torch.float64) * 10 + 1
        gt_s = torch.cat([gt[:, :2], gt[:, :2] + gt[:, 2:]], dim=1)

        def ciou_sum():
            corners = torch.cat([pred[:, :2], pred[:, :2] + pred[:, 2:] + 0.5], dim=1)
            return box_regression_loss(corners, gt_s).sum()

        worst["box_regression_loss"] = central_fd_rel_error(ciou_sum, [pred], eps=1e-6)

        elapsed = time.monotonic() - t0
        for name in ("sppf_lska", "cfc_crb", "sfc_g2"):
            check(f"gradients: {name} rel err <= 1e-4", worst[name] <= 1e-4,
                  f"{worst[name]:.2e}")
        for name in ("atf_loss", "dfl_loss", "box_regression_loss"):
            check(f"gradients: {name} rel err <= 1e-6", worst[name] <= 1e-6,
                  f"{worst[name]:.2e}")
        check("gradients: suite under 60 s", elapsed < 60.0, f"{elapsed:.1f}s")


# ------------------------------------------------- metric oracle equivalence


class TestMetricOracleEquivalence:
    def test_evaluator_matches_brute_force_1000_instances(self):
        worst = 0.0
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            dets, gts = random_instance(rng)
            if not any(gts):
                continue
            rep = evaluate(dets, gts, conf_threshold=0.25, nms_threshold=0.5)
            ap, map50, map5095, precision, recall = ref_evaluate(dets, gts, 0.25, 0.5)
            worst = max(worst, abs(rep.map50 - map50), abs(rep.map50_95 - map5095),
                        abs(rep.precision - precision), abs(rep.recall - recall))
            for c in ap:
                for t in IOU_THRESHOLDS:
                    worst = max(worst, abs(rep.ap[c][t] - ap[c][t]))
        check("metrics: evaluate matches brute force on 1000 instances within 1e-9",
              worst < 1e-9, f"worst {worst:.2e}")

    def test_nms_matches_exhaustive_reference_500_sets(self):
        from deskdet.boxes import DetectionBox

        mismatches = 0
        for seed in range(500):
            rng = np.random.default_rng(seed)
            dets = []
            for _ in range(20):
                x1, y1 = rng.uniform(0, 60, 2)
                w, h = rng.uniform(5, 30, 2)
                dets.append(DetectionBox(int(rng.integers(0, 3)),
                                         float(rng.uniform(0, 1)),
                                         x1, y1, x1 + w, y1 + h))
            if nms(dets, 0.5) != ref_nms(dets, 0.5):
                mismatches += 1
        check("metrics: nms matches exhaustive reference on 500 20-box sets exactly",
              mismatches == 0, f"{mismatches} mismatches")


# ----------------------------------------------------------- loss reductions


class TestLossReductions:
    def test_atf_reduces_to_bce(self):
        p = torch.arange(0.01, 0.995, 0.01, dtype=torch.float64)
        cfg = ATFConfig(gamma=0.0, tau=0.0, tau_mode="fixed")
        worst = 0.0
        for target in (torch.zeros_like(p), torch.ones_like(p)):
            gap = (atf_loss(p, target, cfg) - binary_cross_entropy(p, target)).abs()
            worst = max(worst, gap.max().item())
        check("losses: atf(gamma=0, tau=0) equals BCE within 1e-9 on the p grid",
              worst < 1e-9, f"worst {worst:.2e}")

    def test_modulating_factor_continuous_at_tau(self):
        tau, delta = 0.4, 1e-7
        worst = 0.0
        for gamma in (0.5, 1.0, 2.0):
            cfg = ATFConfig(gamma=gamma, tau=tau, tau_mode="fixed")
            for p_t in (tau - delta, tau + delta):
                p = torch.tensor([p_t], dtype=torch.float64)
                factor = (atf_loss(p, torch.ones(1), cfg)
                          / binary_cross_entropy(p, torch.ones(1))).item()
                worst = max(worst, abs(factor - 1.0))
        check("losses: modulating factor continuous at p_t = tau for gamma in {0.5, 1, 2}",
              worst < 1e-5, f"jump {worst:.2e}")


# ------------------------------------------------------- overfit learnability


@pytest.mark.slow
class TestOverfitLearnability:
    def test_tiny_model_overfits_32_images(self, tmp_path):
        cfg = RunConfig()
        cfg.train_images = 32
        cfg.dataset_dir = str(tmp_path / "dataset")
        export_dataset(cfg.scene, 32, tmp_path / "dataset" / "train")
        t0 = time.monotonic()
        model, _ = train(cfg, tmp_path / "dataset" / "train", tmp_path / "runs")
        report = evaluate_model(model, tmp_path / "dataset" / "train")
        elapsed = time.monotonic() - t0
        check("overfit: mAP50 >= 0.90 on the training set after 500 iterations",
              report.map50 >= 0.90, f"mAP50 {report.map50:.3f}")
        check("overfit: runtime <= 15 minutes", elapsed <= 900, f"{elapsed:.0f}s")


# ------------------------------------------------- ablation direction (soft)


LONG_TAIL = (0.40, 0.20, 0.15, 0.10, 0.08, 0.05, 0.02)
ABLATION_SEEDS = (0, 1, 2)
ABLATION_ITERS = 200


@pytest.mark.slow
class TestAblationDirection:
    def test_table3_row_structure(self):
        names = [row[0] for row in ABLATION_ROWS]
        check("ablation: 8 rows labeled Baseline, +A, +B, +C, +A+B, +A+C, +B+C, +A+B+C",
              names == ["Baseline", "+A", "+B", "+C",
                        "+A+B", "+A+C", "+B+C", "+A+B+C"])

    def test_full_model_beats_baseline_in_majority_of_seeds(self, tmp_path):
        data_root = tmp_path / "longtail" / "train"
        spec = SceneSpec(class_frequencies=LONG_TAIL, seed=123)
        export_dataset(spec, 500, data_root)

        wins = 0
        scores = {}
        for seed in ABLATION_SEEDS:
            pair = {}
            for full in (False, True):
                cfg = RunConfig()
                cfg.model.seed = seed
                cfg.model.enable_A = cfg.model.enable_B = cfg.model.enable_C = full
                cfg.optimizer.iterations = ABLATION_ITERS
                model, _ = train(cfg, data_root,
                                 tmp_path / f"run_s{seed}_{'full' if full else 'base'}")
                pair[full] = evaluate_model(model, data_root).map50_95
            scores[seed] = pair
            wins += pair[True] >= pair[False]
        detail = "; ".join(
            f"seed {s}: full {v[True]:.3f} vs base {v[False]:.3f}"
            for s, v in scores.items())
        check("ablation: +A+B+C mAP50-95 >= baseline in majority of 3 seeds",
              wins * 2 > len(ABLATION_SEEDS), detail)


# ---------------------------------------------------------------- determinism


class TestDeterminism:
    def _tiny(self, tmp_path, **extra):
        cfg = {
            "model": {"input_size": 64, "seed": 0},
            "optimizer": {"iterations": 1, "batch_size": 2, "warmup_steps": 1},
            "scene": {"rows": 1, "cols": 2, "occupancy": 1.0, "image_size": 64,
                      "occlusion_prob": 0.0},
            "train_images": 2, "val_images": 1,
            "dataset_dir": str(tmp_path / "dataset"),
            "output_dir": str(tmp_path / "runs"),
        }
        cfg.update(extra)
        path = tmp_path / f"config{len(extra)}.json"
        path.write_text(json.dumps(cfg))
        return str(path)

    def test_synth_byte_reproducible(self, tmp_path):
        a = self._tiny(tmp_path, dataset_dir=str(tmp_path / "a"))
        b = self._tiny(tmp_path, dataset_dir=str(tmp_path / "b"), val_images=1)
        assert main(["synth", "--config", a]) == EXIT_OK
        assert main(["synth", "--config", b]) == EXIT_OK
        files = sorted(p.relative_to(tmp_path / "a")
                       for p in (tmp_path / "a").rglob("*") if p.is_file())
        same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
                   for f in files)
        check("determinism: cmd_synth byte-reproducible under a fixed seed",
              bool(files) and same)

    def test_eval_byte_reproducible(self, tmp_path, capsys):
        path = self._tiny(tmp_path)
        assert main(["synth", "--config", path]) == EXIT_OK
        assert main(["train", "--config", path]) == EXIT_OK
        capsys.readouterr()
        args = ["eval", str(tmp_path / "runs" / "final.ckpt"),
                str(tmp_path / "dataset" / "val")]
        assert main(args) == EXIT_OK
        first = capsys.readouterr().out
        assert main(args) == EXIT_OK
        second = capsys.readouterr().out
        check("determinism: cmd_eval byte-reproducible", first == second)

    @pytest.mark.slow
    def test_ablate_byte_reproducible(self, tmp_path, capsys):
        path = self._tiny(tmp_path)
        assert main(["synth", "--config", path]) == EXIT_OK
        assert main(["ablate", "--config", path]) == EXIT_OK
        first = (tmp_path / "runs" / "ablation.csv").read_bytes()
        other = self._tiny(tmp_path, output_dir=str(tmp_path / "runs2"))
        assert main(["ablate", "--config", other]) == EXIT_OK
        capsys.readouterr()
        second = (tmp_path / "runs2" / "ablation.csv").read_bytes()
        check("determinism: cmd_ablate rerun yields identical CSV", first == second)

    def test_toggles_off_bit_identical_to_baseline(self):
        base = build_model(ModelConfig(input_size=64, seed=7))
        off = build_model(ModelConfig(input_size=64, seed=7, enable_A=False,
                                      enable_B=False, enable_C=False))
        state_equal = all(torch.equal(a, b) for (_, a), (_, b) in
                          zip(base.state_dict().items(), off.state_dict().items()))
        base.eval(), off.eval()
        x = torch.rand(1, 3, 64, 64)
        with torch.no_grad():
            ra, rb = base(x), off(x)
        out_equal = all(torch.equal(a, b) for a, b in
                        zip(ra.cls_logits + ra.box_logits, rb.cls_logits + rb.box_logits))
        check("determinism: toggles-off scaffold bit-identical to baseline path",
              state_equal and out_equal)


# ------------------------------------------------------------ module contracts


class TestModuleContracts:
    def test_zero_displacement_warp_is_identity(self):
        torch.manual_seed(3)
        x = torch.randn(2, 8, 9, 13)
        out = grouped_warp(x, torch.zeros(2, 4, 2, 9, 13))
        check("contracts: zero-displacement grouped_warp is identity (bit-exact)",
              torch.equal(out, x))

    def test_attention_weights_row_normalize(self):
        torch.manual_seed(4)
        m = ContextCalibration(16, bins=(1, 2, 3))
        x = torch.randn(2, 16, 12, 12)
        units, _ = cascaded_pyramid_context(x, m.bins)
        sums = m.attention_weights(x, units).sum(dim=-1)
        worst = (sums - 1).abs().max().item()
        check("contracts: CFC-CRB attention weights row-normalize within 1e-6",
              worst < 1e-6, f"worst {worst:.2e}")

    def test_gate_strictly_inside_unit_interval(self):
        torch.manual_seed(5)
        m = SpatialFusion(8, 8, 8, groups=2).double()
        with torch.no_grad():
            m.gate_conv.weight.normal_(0, 1.0)
            m.gate_conv.bias.normal_(0, 1.0)
        a = torch.randn(2, 8, 16, 16, dtype=torch.float64)
        b = torch.randn(2, 8, 16, 16, dtype=torch.float64)
        gate = torch.sigmoid(m.gate_conv(torch.cat([a, b], dim=1)))
        check("contracts: gate field lies strictly in (0, 1)",
              bool((gate > 0).all() and (gate < 1).all()))

    def test_shape_invariants_at_three_input_sizes(self):
        ok = True
        detail = []
        for size in (128, 256, 640):
            model = build_model(ModelConfig(input_size=size, seed=0,
                                            enable_A=True, enable_B=True)).eval()
            with torch.no_grad():
                raw = model(torch.rand(1, 3, size, size))
            for cls_l, box_l, stride in zip(raw.cls_logits, raw.box_logits, raw.strides):
                want = size // stride
                if cls_l.shape != (1, 7, want, want):
                    ok, _ = False, detail.append(f"{size}/cls/{stride}")
                if box_l.shape != (1, 64, want, want):
                    ok, _ = False, detail.append(f"{size}/box/{stride}")
        check("contracts: shape invariants hold for input sizes {128, 256, 640}",
              ok, ", ".join(detail))
