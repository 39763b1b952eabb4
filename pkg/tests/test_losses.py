from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from lowprofile.distribution import GaussianStats
from lowprofile.losses import (BatchLossInputs, LossTrace, MD_FLOOR, loss_dal,
                               loss_fce, loss_md, loss_msp, loss_nce)


def make_stats(d: int, rng: np.random.Generator) -> GaussianStats:
    a = rng.normal(size=(d, d))
    sigma_inv = a @ a.T + 0.5 * np.eye(d)
    sigma_inv = (sigma_inv + sigma_inv.T) / 2
    return GaussianStats(mu=rng.normal(size=d), sigma_inv=sigma_inv,
                         ridge_epsilon=0.0, n_fit=100)


def make_inputs(batch, d, rng, reduction="mean", dtype=torch.float64):
    return BatchLossInputs(
        logit_orig=torch.tensor(rng.normal(size=batch), dtype=dtype),
        logit_adv=torch.tensor(rng.normal(size=batch), dtype=dtype),
        embeddings=torch.tensor(rng.normal(size=(batch, d)), dtype=dtype),
        stats=make_stats(d, rng),
        reduction=reduction,
    )


def central_difference(fn, tensor, h=1e-6):
    """Finite-difference oracle for the gradient of scalar fn wrt tensor."""
    grad = torch.zeros_like(tensor)
    flat = tensor.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        original = flat[i].item()
        flat[i] = original + h
        plus = fn().item()
        flat[i] = original - h
        minus = fn().item()
        flat[i] = original
        gflat[i] = (plus - minus) / (2 * h)
    return grad


class TestLossMsp:
    def test_equal_scores_give_half(self):
        inputs = BatchLossInputs(logit_orig=torch.tensor([1.3]),
                                 logit_adv=torch.tensor([1.3]),
                                 embeddings=torch.zeros(1, 2))
        assert loss_msp(inputs).item() == pytest.approx(0.5)

    def test_closed_form(self):
        inputs = BatchLossInputs(logit_orig=torch.tensor([0.0]),
                                 logit_adv=torch.tensor([2.0]),
                                 embeddings=torch.zeros(1, 2))
        assert loss_msp(inputs).item() == pytest.approx(1 / (1 + math.exp(2)), abs=1e-7)

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        base = make_inputs(4, 2, rng)
        shifted = BatchLossInputs(logit_orig=base.logit_orig + 3.7,
                                  logit_adv=base.logit_adv + 3.7,
                                  embeddings=base.embeddings,
                                  stats=base.stats)
        assert loss_msp(shifted).item() == pytest.approx(loss_msp(base).item(),
                                                         abs=1e-12)

    def test_value_in_open_unit_interval_and_monotone(self):
        gaps = torch.linspace(-20, 20, 41, dtype=torch.float64)
        values = []
        for gap in gaps:
            inputs = BatchLossInputs(logit_orig=torch.tensor([0.0], dtype=torch.float64),
                                     logit_adv=gap.view(1),
                                     embeddings=torch.zeros(1, 2, dtype=torch.float64))
            values.append(loss_msp(inputs).item())
        assert all(0.0 < v < 1.0 for v in values)
        assert all(a > b for a, b in zip(values, values[1:]))  # decreasing in s_a - s_o

    def test_nan_rejected(self):
        inputs = BatchLossInputs(logit_orig=torch.tensor([float("nan")]),
                                 logit_adv=torch.tensor([0.0]),
                                 embeddings=torch.zeros(1, 2))
        with pytest.raises(ValueError):
            loss_msp(inputs)


class TestLossMd:
    def _inputs_with_quad(self, quad_value: float) -> BatchLossInputs:
        # mu = 0 and identity inverse covariance: quad form is ||x||^2
        stats = GaussianStats(mu=np.zeros(2), sigma_inv=np.eye(2),
                              ridge_epsilon=0.0, n_fit=10)
        x = torch.tensor([[math.sqrt(quad_value), 0.0]], dtype=torch.float64)
        return BatchLossInputs(logit_orig=torch.zeros(1, dtype=torch.float64),
                               logit_adv=torch.zeros(1, dtype=torch.float64),
                               embeddings=x, stats=stats)

    def test_unit_quadratic_form_gives_zero(self):
        assert loss_md(self._inputs_with_quad(1.0)).item() == pytest.approx(0.0, abs=1e-9)

    def test_e_squared_gives_one(self):
        assert loss_md(self._inputs_with_quad(math.e ** 2)).item() == pytest.approx(
            1.0, abs=1e-9)

    def test_floor_keeps_value_finite_at_mean(self):
        value = loss_md(self._inputs_with_quad(0.0)).item()
        assert value == pytest.approx(math.log(math.sqrt(MD_FLOOR)), abs=1e-9)
        assert math.isfinite(value)

    def test_orthogonal_invariance(self):
        rng = np.random.default_rng(3)
        inputs = make_inputs(5, 4, rng)
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        rotated = BatchLossInputs(
            logit_orig=inputs.logit_orig,
            logit_adv=inputs.logit_adv,
            embeddings=inputs.embeddings @ torch.tensor(q.T),
            stats=GaussianStats(mu=q @ inputs.stats.mu,
                                sigma_inv=q @ inputs.stats.sigma_inv @ q.T,
                                ridge_epsilon=0.0, n_fit=100),
        )
        assert loss_md(rotated).item() == pytest.approx(loss_md(inputs).item(),
                                                        abs=1e-9)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(4)
        inputs = make_inputs(3, 4, rng)
        bad = BatchLossInputs(logit_orig=inputs.logit_orig,
                              logit_adv=inputs.logit_adv,
                              embeddings=torch.zeros(3, 5, dtype=torch.float64),
                              stats=inputs.stats)
        with pytest.raises(ValueError):
            loss_md(bad)


class TestLossDal:
    def test_sum_of_components_exact(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            inputs = make_inputs(4, 3, rng)
            total = loss_dal(inputs)
            assert total.item() == (loss_msp(inputs) + loss_md(inputs)).item()

    def test_ablations(self):
        rng = np.random.default_rng(6)
        inputs = make_inputs(4, 3, rng)
        assert loss_dal(inputs, include_md=False).item() == loss_msp(inputs).item()
        assert loss_dal(inputs, include_msp=False).item() == loss_md(inputs).item()
        with pytest.raises(ValueError):
            loss_dal(inputs, include_msp=False, include_md=False)

    def test_duplication_invariance_under_mean(self):
        rng = np.random.default_rng(7)
        inputs = make_inputs(3, 4, rng)
        doubled = BatchLossInputs(
            logit_orig=torch.cat([inputs.logit_orig] * 2),
            logit_adv=torch.cat([inputs.logit_adv] * 2),
            embeddings=torch.cat([inputs.embeddings] * 2),
            stats=inputs.stats,
        )
        assert loss_dal(doubled).item() == pytest.approx(loss_dal(inputs).item(),
                                                         abs=1e-12)

    def test_sum_reduction_scales_with_batch(self):
        rng = np.random.default_rng(8)
        inputs = make_inputs(3, 4, rng, reduction="sum")
        doubled = BatchLossInputs(
            logit_orig=torch.cat([inputs.logit_orig] * 2),
            logit_adv=torch.cat([inputs.logit_adv] * 2),
            embeddings=torch.cat([inputs.embeddings] * 2),
            stats=inputs.stats, reduction="sum",
        )
        assert loss_dal(doubled).item() == pytest.approx(2 * loss_dal(inputs).item(),
                                                         rel=1e-12)


def reference_cross_entropy(logits: torch.Tensor, gold: torch.Tensor) -> float:
    """Independent oracle: explicit log-softmax cross-entropy, mean reduced."""
    total = 0.0
    for row, g in zip(logits, gold):
        z = row - row.max()
        log_probs = z - torch.log(torch.exp(z).sum())
        total += -log_probs[g].item()
    return total / len(gold)


class TestComparisonLosses:
    def test_uniform_logits_closed_form(self):
        logits = torch.zeros(1, 2, dtype=torch.float64)
        gold = torch.tensor([0])
        assert loss_nce(logits, gold).item() == pytest.approx(-math.log(2), abs=1e-12)
        assert loss_fce(logits, gold).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_confident_correct_prediction_bounded(self):
        logits = torch.tensor([[50.0, -50.0]], dtype=torch.float64)
        gold = torch.tensor([0])
        value = loss_nce(logits, gold).item()
        assert -1e-6 < value <= 0.0
        assert math.isfinite(value)

    def test_fce_equals_flipped_reference_ce(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            n = int(rng.integers(1, 6))
            logits = torch.tensor(rng.normal(size=(n, 2)), dtype=torch.float64)
            gold = torch.tensor(rng.integers(0, 2, size=n))
            assert loss_fce(logits, gold).item() == pytest.approx(
                reference_cross_entropy(logits, 1 - gold), abs=1e-8)
            assert loss_nce(logits, gold).item() == pytest.approx(
                -reference_cross_entropy(logits, gold), abs=1e-8)

    def test_fce_rejects_non_binary(self):
        with pytest.raises(ValueError):
            loss_fce(torch.zeros(2, 3), torch.tensor([0, 1]))


class TestGradients:
    @pytest.mark.parametrize("loss_fn,fields", [
        (loss_msp, ("logit_orig", "logit_adv")),
        (loss_md, ("embeddings",)),
        (loss_dal, ("logit_orig", "logit_adv", "embeddings")),
    ])
    def test_analytic_matches_central_differences(self, loss_fn, fields):
        rng = np.random.default_rng(10)
        for _ in range(10):
            batch = int(rng.integers(1, 5))
            d = int(rng.integers(2, 9))
            inputs = make_inputs(batch, d, rng)
            tensors = [getattr(inputs, f) for f in fields]
            for t in tensors:
                t.requires_grad_(True)
            value = loss_fn(inputs)
            value.backward()
            for t in tensors:
                with torch.no_grad():
                    numeric = central_difference(lambda: loss_fn(inputs), t.data)
                denom = max(float(t.grad.abs().max()), 1e-8)
                rel_err = float((t.grad - numeric).abs().max()) / denom
                assert rel_err < 1e-4


class TestLossTrace:
    def test_append_and_export(self, tmp_path):
        trace = LossTrace()
        trace.append(0, 0.5, 1.0, 1.5, 1.5)
        trace.append(1, 0.4, 0.9, 1.3, 1.3)
        paths = trace.export(tmp_path)
        assert len(paths) == 4
        lines = (tmp_path / "loss_dal.txt").read_text().splitlines()
        assert lines[0].split("\t") == ["0", "1.5"]
        assert len(lines) == 2

    def test_steps_strictly_increasing(self):
        trace = LossTrace()
        trace.append(3, 0, 0, 0, 0)
        with pytest.raises(ValueError):
            trace.append(3, 0, 0, 0, 0)

    def test_round_trip(self):
        trace = LossTrace()
        trace.append(0, 0.5, 1.0, 1.5, 1.5)
        assert LossTrace.from_json_dict(trace.to_json_dict()) == trace
