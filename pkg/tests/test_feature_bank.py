import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from mixgan.discriminator import Discriminator, DiscriminatorConfig
from mixgan.feature_bank import FeatureBank
from mixgan.generator import Generator, GeneratorConfig, sample_latent


def test_momentum_one_is_full_replacement():
    bank = FeatureBank((4,), momentum=1.0)
    feats = torch.rand(8, 3, 4, 4, generator=torch.Generator().manual_seed(0))
    bank.update({4: feats})
    assert torch.allclose(bank.entries[4], feats.mean(dim=0, keepdim=True), atol=0, rtol=0)
    assert bank.step_count == 1


def test_zero_momentum_rejected():
    with pytest.raises(ValueError):
        FeatureBank((4,), momentum=0.0)
    bank = FeatureBank((4,), momentum=0.5)
    with pytest.raises(ValueError):
        bank.update({4: torch.zeros(1, 1, 4, 4)}, momentum=0.0)


@pytest.mark.parametrize("momentum", [0.1, 0.3, 0.9])
def test_geometric_convergence_to_constant_stream(momentum):
    bank = FeatureBank((4,), momentum=momentum)
    f = torch.full((2, 3, 4, 4), 1.7)
    for _ in range(10):
        bank.update({4: f})
    rel = float(((bank.entries[4] - 1.7).abs() / 1.7).max())
    assert rel <= (1.0 - momentum) ** 10 + 1e-6


def test_snapshot_is_isolated_from_updates():
    bank = FeatureBank((4,), momentum=1.0)
    bank.update({4: torch.ones(2, 3, 4, 4)})
    view = bank.snapshot()
    bank.update({4: torch.zeros(2, 3, 4, 4)})
    assert torch.all(view[4] == 1.0)
    assert torch.all(bank.entries[4] == 0.0)


def test_empty_snapshot_has_no_entries():
    bank = FeatureBank((4, 8), momentum=0.1)
    assert bank.snapshot() == {}


def test_missing_resolution_rejected():
    bank = FeatureBank((4, 8), momentum=0.5)
    with pytest.raises(ValueError):
        bank.update({4: torch.zeros(1, 1, 4, 4)})


def test_entries_are_detached():
    bank = FeatureBank((4,), momentum=0.5)
    feats = torch.rand(2, 3, 4, 4, requires_grad=True)
    bank.update({4: feats})
    assert not bank.entries[4].requires_grad
    assert not bank.snapshot()[4].requires_grad


@given(momentum=st.floats(0.05, 1.0), seed=st.integers(0, 1000))
def test_ema_stays_in_stream_convex_hull(momentum, seed):
    rng = torch.Generator().manual_seed(seed)
    bank = FeatureBank((4,), momentum=momentum)
    lo, hi = None, None
    for _ in range(6):
        feats = torch.rand(3, 2, 4, 4, generator=rng) * 4 - 2
        mean = feats.mean(dim=0, keepdim=True)
        lo = mean if lo is None else torch.minimum(lo, mean)
        hi = mean if hi is None else torch.maximum(hi, mean)
        bank.update({4: feats})
        # zero start: hull includes the implicit zero initial entry
        assert torch.all(bank.entries[4] >= torch.minimum(lo, torch.zeros_like(lo)) - 1e-6)
        assert torch.all(bank.entries[4] <= torch.maximum(hi, torch.zeros_like(hi)) + 1e-6)


def test_state_dict_round_trip():
    bank = FeatureBank((4, 8), momentum=0.25)
    bank.update(
        {
            4: torch.rand(2, 3, 4, 4, generator=torch.Generator().manual_seed(1)),
            8: torch.rand(2, 2, 8, 8, generator=torch.Generator().manual_seed(2)),
        }
    )
    clone = FeatureBank.from_state_dict(bank.state_dict())
    assert clone.momentum == bank.momentum
    assert clone.step_count == bank.step_count
    for res in (4, 8):
        assert torch.equal(clone.entries[res], bank.entries[res])


def test_no_gradient_leaks_from_generator_loss_to_discriminator():
    torch.manual_seed(0)
    disc = Discriminator(DiscriminatorConfig(resolution=16, base_channels=8, pixel_channels=8))
    feat_ch = disc.feature_channels()
    skip = (4, 8)
    gen = Generator(
        GeneratorConfig(
            latent_dim=8,
            base_channels=8,
            resolution=16,
            skip_resolutions=skip,
            skip_channels={r: feat_ch[r] for r in skip},
        )
    )
    bank = FeatureBank(skip, momentum=0.5)

    real = torch.rand(4, 1, 16, 16, generator=torch.Generator().manual_seed(3)) * 2 - 1
    out = disc(real, capture_features=True)
    bank.update({r: out.features[r] for r in skip})

    z = sample_latent(2, 8, torch.Generator().manual_seed(4))
    probe = gen(z, bank.snapshot()).images.sum()
    grads = torch.autograd.grad(probe, list(disc.parameters()), allow_unused=True)
    assert all(g is None for g in grads)
