import pytest
import torch

from uflossmri.config.schemas import UflossConfig
from uflossmri.data.patches import grid_origins
from uflossmri.featnet.network import FeatureNet
from uflossmri.ufloss.loss import (
    draw_shift,
    freeze,
    frozen,
    grid_patch_batch,
    recon_loss,
    ufloss,
    ufloss_all_shifts,
    ufloss_mse_form,
    ufloss_per_image,
)

CFG = UflossConfig(patch_size=8, stride=4, mu=1.5)


def _net(dtype: torch.dtype = torch.float32) -> FeatureNet:
    torch.manual_seed(0)
    net = FeatureNet(8, stage_blocks=(1,), base_width=4, feature_dim=8)
    return freeze(net.to(dtype))


def _images(batch: int, seed: int, dtype: torch.dtype = torch.complex64) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    real = torch.randn(batch, 16, 16, generator=generator, dtype=torch.float64)
    imag = torch.randn(batch, 16, 16, generator=generator, dtype=torch.float64)
    return torch.complex(real, imag).to(dtype)


def test_grid_patches_match_grid_origins() -> None:
    images = _images(2, 0)

    patches, count = grid_patch_batch(images, 8, 4, shift=(1, 2))

    origins = grid_origins((16, 16), 8, 4, shift=(1, 2))
    assert count == len(origins) == 4
    assert patches.shape == (8, 2, 8, 8)
    for j, (r, c) in enumerate(origins):
        expected = images[1, r:r + 8, c:c + 8]
        assert torch.equal(patches[count + j, 0], expected.real)
        assert torch.equal(patches[count + j, 1], expected.imag)


def test_grid_patches_reject_bad_shift_and_empty_grid() -> None:
    with pytest.raises(ValueError, match="shift"):
        grid_patch_batch(_images(1, 0), 8, 4, shift=(4, 0))
    with pytest.raises(ValueError, match="M = 0"):
        grid_patch_batch(_images(1, 0)[:, :8, :8], 8, 4, shift=(1, 0))


def test_ufloss_is_zero_on_identical_images_and_bounded() -> None:
    net = _net()
    x = _images(2, 1)
    xhat = _images(2, 2)

    assert float(ufloss(x, x, net, CFG)) == pytest.approx(0.0, abs=1e-6)
    values = ufloss_per_image(x, xhat, net, CFG)
    assert values.shape == (2,)
    assert bool(((values >= -1e-6) & (values <= 2.0 + 1e-6)).all())


def test_inner_product_and_squared_distance_forms_agree() -> None:
    net = _net(torch.float64)
    x = _images(2, 3, torch.complex128)
    xhat = _images(2, 4, torch.complex128)

    for shift in [(0, 0), (1, 3), (3, 2)]:
        assert float(ufloss_mse_form(x, xhat, net, CFG, shift)) == pytest.approx(
            float(ufloss(x, xhat, net, CFG, shift)), abs=1e-12
        )


def test_all_shift_average_matches_manual_mean() -> None:
    net = _net(torch.float64)
    x = _images(1, 5, torch.complex128)
    xhat = _images(1, 6, torch.complex128)
    cfg = UflossConfig(patch_size=8, stride=2)

    manual = sum(float(ufloss(x, xhat, net, cfg, (r, c))) for r in range(2) for c in range(2)) / 4

    assert float(ufloss_all_shifts(x, xhat, net, cfg)) == pytest.approx(manual)


def test_ufloss_rejects_mismatched_inputs() -> None:
    net = _net()
    with pytest.raises(ValueError, match="Shape mismatch"):
        ufloss(_images(1, 0), _images(2, 0), net, CFG)
    with pytest.raises(ValueError, match="trained on 8x8 patches"):
        ufloss(_images(1, 0), _images(1, 1), net, UflossConfig(patch_size=6, stride=3))


def test_draw_shift_is_reproducible_and_in_range() -> None:
    shifts = {draw_shift(seed, 5) for seed in range(200)}

    assert draw_shift(7, 5) == draw_shift(7, 5)
    assert all(0 <= r < 5 and 0 <= c < 5 for r, c in shifts)
    assert len(shifts) > 10


def test_recon_loss_combines_parts() -> None:
    net = _net(torch.float64)
    x = _images(2, 7, torch.complex128)
    xhat = _images(2, 8, torch.complex128)

    parts = recon_loss(x, xhat, net, CFG, step_seed=3)

    expected_mse = float(((xhat - x).abs() ** 2).sum(dim=(-2, -1)).mean())
    assert float(parts.mse_part) == pytest.approx(expected_mse)
    assert float(parts.ufloss_part) == pytest.approx(float(ufloss(x, xhat, net, CFG, draw_shift(3, 4))))
    assert float(parts.total) == pytest.approx(float(parts.mse_part + 3.0 * parts.ufloss_part))

    plain = recon_loss(x, xhat, None, CFG, step_seed=3)
    assert float(plain.total) == pytest.approx(expected_mse)
    assert float(plain.ufloss_part) == 0.0
    zero_mu = recon_loss(x, xhat, net, UflossConfig(patch_size=8, stride=4, mu=0.0), step_seed=3)
    assert float(zero_mu.total) == pytest.approx(expected_mse)


def test_ufloss_gradient_matches_finite_difference() -> None:
    net = _net(torch.float64)
    x = _images(1, 9, torch.complex128)
    xhat = _images(1, 10, torch.complex128).requires_grad_(True)
    direction = _images(1, 11, torch.complex128)

    value = ufloss(x, xhat, net, CFG)
    (grad,) = torch.autograd.grad(value, xhat)
    analytic = float(torch.sum(grad.conj() * direction).real)

    eps = 1e-5
    with torch.no_grad():
        plus = float(ufloss(x, xhat + eps * direction, net, CFG))
        minus = float(ufloss(x, xhat - eps * direction, net, CFG))
    numeric = (plus - minus) / (2 * eps)

    assert analytic == pytest.approx(numeric, rel=1e-3, abs=1e-7)


def test_frozen_network_receives_no_gradient() -> None:
    net = _net()
    xhat = _images(1, 12).requires_grad_(True)

    ufloss(_images(1, 13), xhat, net, CFG).backward()

    assert xhat.grad is not None
    assert all(parameter.grad is None for parameter in net.parameters())


def test_zero_weight_reports_ufloss_without_graph() -> None:
    net = _net(torch.float64)
    x = _images(2, 14, torch.complex128)
    xhat = _images(2, 15, torch.complex128).requires_grad_(True)
    cfg = UflossConfig(patch_size=8, stride=4, mu=0.0)

    parts = recon_loss(x, xhat, net, cfg, step_seed=1)
    (grad,) = torch.autograd.grad(parts.total, xhat)

    assert not parts.ufloss_part.requires_grad
    assert float(parts.ufloss_part) == pytest.approx(float(ufloss(x, xhat.detach(), net, cfg, draw_shift(1, 4))))
    assert torch.allclose(grad, (xhat - x).detach())


def test_frozen_restores_training_state() -> None:
    torch.manual_seed(0)
    net = FeatureNet(8, stage_blocks=(1,), base_width=4, feature_dim=8)
    net.head.weight.requires_grad_(False)

    with frozen(net) as inside:
        assert inside is net
        assert not net.training
        assert not any(parameter.requires_grad for parameter in net.parameters())

    assert net.training
    assert not net.head.weight.requires_grad
    assert net.head.bias.requires_grad
