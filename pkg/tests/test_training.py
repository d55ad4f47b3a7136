import dataclasses
import json

import pytest
import torch

from mixgan.data import phantom_dataset
from mixgan.errors import DataError, NumericalError
from mixgan.losses import adv_d_loss
from mixgan.training import (
    TrainConfig,
    build_state,
    generate_samples,
    load_checkpoint,
    phase_for_epoch,
    save_checkpoint,
    train,
    train_step,
)

TINY = dict(
    resolution=16,
    phantom_size=48,
    batch_size=16,
    latent_dim=16,
    g_base_channels=8,
    d_base_channels=8,
    pixel_channels=8,
)


def tiny_config(**overrides):
    base = dict(TINY, total_epochs=4, warmup_epochs=2, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


def read_metrics(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def strip_timing(records):
    return [{k: v for k, v in r.items() if k != "step_time_s"} for r in records]


class TestPhaseSchedule:
    def test_boundary(self):
        cfg = tiny_config(total_epochs=10, warmup_epochs=4)
        phases = [phase_for_epoch(cfg, e) for e in range(10)]
        assert phases == ["warmup"] * 4 + ["augmented"] * 6

    def test_warmup_equals_total_disables_augmentation(self):
        cfg = tiny_config(total_epochs=6, warmup_epochs=6)
        assert all(phase_for_epoch(cfg, e) == "warmup" for e in range(6))

    def test_zero_warmup_augments_from_first_step(self):
        cfg = tiny_config(total_epochs=6, warmup_epochs=0)
        assert phase_for_epoch(cfg, 0) == "augmented"

    def test_two_phase_off_ignores_warmup(self):
        cfg = tiny_config(total_epochs=6, warmup_epochs=4, two_phase=False)
        assert phase_for_epoch(cfg, 0) == "augmented"

    def test_attnmix_off_never_augments(self):
        cfg = tiny_config(attnmix=False, warmup_epochs=0)
        assert all(phase_for_epoch(cfg, e) == "warmup" for e in range(4))

    def test_warmup_beyond_total_rejected(self):
        with pytest.raises(ValueError):
            tiny_config(total_epochs=2, warmup_epochs=3)


class TestTrainStep:
    def test_base_model_touches_only_image_branch_and_generator(self):
        cfg = tiny_config(
            attnmix=False, reverse_skip=False, pixel_branch=False, two_phase=False
        )
        state = build_state(cfg)
        pixel_before = [p.clone() for p in state.discriminator.pixel_branch_parameters()]
        batch = phantom_dataset(16, 16, seed=1).images
        train_step(state, batch, "warmup")
        pixel_after = list(state.discriminator.pixel_branch_parameters())
        for before, after in zip(pixel_before, pixel_after):
            assert torch.equal(before, after)
        assert state.bank.step_count == 0

    def test_consistency_terms_do_not_leak_into_generator_update(self):
        # frozen discriminator + identity augmentation: the only difference
        # between phases is the beta2 consistency term, which must leave the
        # generator update untouched
        common = dict(lr_d=0.0, aug_ops=(), beta2=1.0, feature_cons_weight=0.1)
        batch = phantom_dataset(16, 16, seed=2).images

        results = {}
        for phase in ("warmup", "augmented"):
            state = build_state(tiny_config(**common))
            train_step(state, batch, phase)
            results[phase] = [p.detach().clone() for p in state.generator.parameters()]
        for a, b in zip(results["warmup"], results["augmented"]):
            assert torch.equal(a, b)

    def test_one_step_improves_separable_toy_discrimination(self):
        torch.manual_seed(0)
        state = build_state(tiny_config(lr_d=1e-3))
        real = torch.full((16, 1, 16, 16), 0.8)
        fake = torch.full((16, 1, 16, 16), -0.8)

        def d_loss():
            l_img, _ = adv_d_loss(state.discriminator(real), state.discriminator(fake))
            return l_img

        before = float(d_loss().detach())
        loss = d_loss()
        state.opt_d.zero_grad()
        loss.backward()
        state.opt_d.step()
        after = float(d_loss().detach())
        assert after < before

    def test_nan_batch_aborts_with_diagnostic(self):
        state = build_state(tiny_config())
        batch = torch.full((16, 1, 16, 16), float("nan"))
        with pytest.raises(NumericalError, match="step 0"):
            train_step(state, batch, "warmup")

    def test_unknown_phase_rejected(self):
        state = build_state(tiny_config())
        with pytest.raises(ValueError):
            train_step(state, torch.zeros(4, 1, 16, 16), "finetune")

    def test_lambda_stats_reported_only_when_augmented(self):
        state = build_state(tiny_config())
        batch = phantom_dataset(16, 16, seed=3).images
        warm = train_step(state, batch, "warmup")
        assert warm["lambda_mean"] is None and not warm["aug_active"]
        state.step += 1
        aug = train_step(state, batch, "augmented")
        assert 0.0 <= aug["lambda_mean"] <= 1.0
        assert aug["aug_active"] and aug["cons_active"]


class TestTrainLoop:
    def test_artifacts_and_phase_flags(self, tmp_path):
        cfg = tiny_config(total_epochs=4, warmup_epochs=2, checkpoint_every=2, grid_every=2)
        result = train(cfg, out_dir=tmp_path)
        assert (tmp_path / "config.resolved").exists()
        assert result.checkpoint_path.exists()
        assert result.final_grid_path.exists()
        assert (tmp_path / "checkpoints" / "epoch_0002.pt").exists()
        assert (tmp_path / "grids" / "epoch_0002.png").exists()

        records = read_metrics(result.metrics_path)
        steps_per_epoch = 48 // 16
        assert len(records) == 4 * steps_per_epoch
        for r in records:
            expected = r["epoch"] >= 2
            assert r["aug_active"] == expected
            assert r["cons_active"] == expected

    def test_seed_determinism_of_metric_logs(self, tmp_path):
        cfg = tiny_config(total_epochs=3, warmup_epochs=1)
        a = train(cfg, out_dir=tmp_path / "a")
        b = train(cfg, out_dir=tmp_path / "b")
        assert strip_timing(read_metrics(a.metrics_path)) == strip_timing(
            read_metrics(b.metrics_path)
        )

    def test_different_seed_changes_logs(self, tmp_path):
        a = train(tiny_config(total_epochs=2, seed=0), out_dir=tmp_path / "a")
        b = train(tiny_config(total_epochs=2, seed=1), out_dir=tmp_path / "b")
        assert strip_timing(read_metrics(a.metrics_path)) != strip_timing(
            read_metrics(b.metrics_path)
        )

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        full_cfg = tiny_config(total_epochs=6, warmup_epochs=2)
        full = train(full_cfg, out_dir=tmp_path / "full")

        short_cfg = dataclasses.replace(full_cfg, total_epochs=3)
        train(short_cfg, out_dir=tmp_path / "short")
        resumed = train(
            full_cfg,
            out_dir=tmp_path / "resumed",
            resume_from=tmp_path / "short" / "checkpoints" / "final.pt",
        )

        full_records = strip_timing(read_metrics(full.metrics_path))
        tail = strip_timing(read_metrics(resumed.metrics_path))
        steps_per_epoch = 48 // 16
        assert tail == full_records[3 * steps_per_epoch :]

    def test_resume_config_mismatch_rejected(self, tmp_path):
        cfg = tiny_config(total_epochs=2)
        result = train(cfg, out_dir=tmp_path / "run")
        other = dataclasses.replace(cfg, total_epochs=4, lr_g=5e-4)
        with pytest.raises(ValueError, match="config differs"):
            train(other, out_dir=tmp_path / "other", resume_from=result.checkpoint_path)

    def test_dataset_mismatch_rejected_before_steps(self, tmp_path):
        cfg = tiny_config()
        with pytest.raises(DataError):
            train(cfg, dataset=phantom_dataset(48, 32, seed=0), out_dir=tmp_path)
        with pytest.raises(DataError):
            train(cfg, dataset=phantom_dataset(8, 16, seed=0), out_dir=tmp_path)

    def test_max_steps_caps_run(self, tmp_path):
        cfg = tiny_config(total_epochs=10, max_steps=5)
        result = train(cfg, out_dir=tmp_path)
        assert result.steps_run == 5
        assert len(read_metrics(result.metrics_path)) == 5


class TestCheckpoints:
    def test_round_trip_bit_exact(self, tmp_path):
        cfg = tiny_config(total_epochs=2, warmup_epochs=0)
        state = build_state(cfg)
        ds = phantom_dataset(48, 16, seed=0)
        for i, batch in enumerate(ds.shuffled_batches(16, state.shuffle_rng)):
            train_step(state, batch, "augmented")
            state.step += 1
        path = save_checkpoint(state, tmp_path / "ck.pt")
        loaded = load_checkpoint(path)

        for key, tensor in state.generator.state_dict().items():
            assert torch.equal(tensor, loaded.generator.state_dict()[key])
        for key, tensor in state.discriminator.state_dict().items():
            assert torch.equal(tensor, loaded.discriminator.state_dict()[key])
        for res, entry in state.bank.entries.items():
            assert torch.equal(entry, loaded.bank.entries[res])
        assert loaded.step == state.step

        a = generate_samples(state.generator, state.bank.snapshot(), 8, seed=3)
        b = generate_samples(loaded.generator, loaded.bank.snapshot(), 8, seed=3)
        assert torch.equal(a, b)

    def test_format_version_checked(self, tmp_path):
        cfg = tiny_config()
        state = build_state(cfg)
        path = save_checkpoint(state, tmp_path / "ck.pt")
        payload = torch.load(path, weights_only=False)
        payload["format_version"] = 99
        torch.save(payload, path)
        with pytest.raises(ValueError, match="format_version"):
            load_checkpoint(path)


class TestToggleFaithfulness:
    def test_reverse_skip_off_keeps_bank_empty_and_matches_zero_bank(self, tmp_path):
        cfg = tiny_config(total_epochs=2, warmup_epochs=0, reverse_skip=False)
        result = train(cfg, out_dir=tmp_path)
        state = load_checkpoint(result.checkpoint_path)
        assert state.bank.step_count == 0
        assert state.bank.snapshot() == {}
        with_bank = generate_samples(state.generator, state.bank.snapshot(), 4, seed=1)
        zero_bank = generate_samples(state.generator, {}, 4, seed=1)
        assert torch.equal(with_bank, zero_bank)

    def test_pixel_branch_off_drops_pixel_terms(self, tmp_path):
        cfg = tiny_config(total_epochs=2, warmup_epochs=0, pixel_branch=False)
        result = train(cfg, out_dir=tmp_path)
        for r in read_metrics(result.metrics_path):
            assert r["d_loss_pixel"] is None
            assert r["g_loss_pixel"] is None
            assert r["cons_loss_pixel"] is None

    def test_bank_mode_latest_replaces_every_step(self):
        # frozen discriminator so features recomputed after the step match
        # what the step captured before its update
        cfg = tiny_config(bank_mode="latest", lr_d=0.0)
        state = build_state(cfg)
        batch = phantom_dataset(16, 16, seed=5).images
        train_step(state, batch, "warmup")
        real_feats = state.discriminator(batch, capture_features=True).features
        want = real_feats[8].mean(dim=0, keepdim=True)
        assert torch.allclose(state.bank.entries[8], want.detach(), atol=1e-6)
        assert state.bank.step_count == 1
