import numpy as np
import pytest
import torch

from uflossmri.config.schemas import FeatNetArch, UflossConfig, UNetArch, UnrollConfig
from uflossmri.data.phantoms import make_phantom_dataset
from uflossmri.encode.coils import synth_coil_maps
from uflossmri.encode.masks import make_mask_1d_random
from uflossmri.encode.operator import encode_adjoint, encode_forward, make_kspace_sample, stack_samples
from uflossmri.featnet.network import FeatureNet
from uflossmri.unrolled.modl import (
    MoDL,
    load_recon_checkpoint,
    modl_forward,
    reconstruct,
    save_recon_checkpoint,
)
from uflossmri.unrolled.train import step_seed, train_modl
from uflossmri.unrolled.unet import ResidualUNet

ARCH = UNetArch(scales=2, base_channels=4)


def _samples(count: int, acceleration: float = 4.0, seed: int = 0):
    dataset = make_phantom_dataset(count, seed=seed)
    maps = synth_coil_maps((64, 64), 2, seed=seed)
    mask = make_mask_1d_random((64, 64), acceleration, 0.08, seed=seed)
    return [make_kspace_sample(item, maps, mask) for item in dataset.slices]


def _model(unrolls: int = 2, cg_steps: int = 3, zero_head: bool = True) -> MoDL:
    torch.manual_seed(0)
    cfg = UnrollConfig(unrolls=unrolls, cg_steps=cg_steps)
    return MoDL.from_config(ARCH, cfg, zero_head=zero_head)


def test_zero_head_unet_starts_as_identity() -> None:
    net = ResidualUNet(scales=3, base_channels=4)
    x = torch.randn(2, 2, 10, 14)

    assert torch.equal(net(x), x)
    assert torch.count_nonzero(net(torch.zeros(1, 2, 16, 16))) == 0


def test_unet_keeps_odd_shapes() -> None:
    torch.manual_seed(0)
    net = ResidualUNet(scales=3, base_channels=4, zero_head=False)

    assert net(torch.randn(1, 2, 10, 14)).shape == (1, 2, 10, 14)
    with pytest.raises(ValueError, match="scales"):
        ResidualUNet(scales=0)


def test_lambda_is_softplus_of_raw_parameter() -> None:
    model = _model()

    assert float(model.lam) == pytest.approx(0.05, rel=1e-5)
    with torch.no_grad():
        model.raw_lam.fill_(-50.0)
    assert float(model.lam) > 0.0
    with pytest.raises(ValueError, match="lam_init"):
        MoDL(ResidualUNet(), lam_init=0.0)


def test_zero_unrolls_return_zero_filled() -> None:
    sample = _samples(1)[0]
    y, maps, mask, _ = sample.tensors(torch.complex64)

    out = modl_forward(y, maps, mask, _model(unrolls=0))

    assert torch.allclose(out, encode_adjoint(y, maps, mask))


def test_fully_sampled_identity_denoiser_reproduces_target() -> None:
    sample = _samples(1, acceleration=1.0)[0]

    images = reconstruct(_model(), [sample])

    assert np.allclose(images[0], sample.target.image, atol=1e-4)


def test_trace_records_each_unroll_and_data_consistency() -> None:
    sample = _samples(1)[0]
    y, maps, mask, _ = sample.tensors(torch.complex128)
    model = _model(unrolls=3, cg_steps=4, zero_head=False).double()
    trace: list[dict] = []

    modl_forward(y, maps, mask, model, trace)

    assert len(trace) == 3
    assert torch.equal(trace[1]["x"], trace[0]["x_next"])
    assert float(trace[0]["lam"]) == pytest.approx(float(model.lam))


def test_gradients_reach_lambda_and_denoiser() -> None:
    y, maps, mask, target = stack_samples(_samples(2))
    model = _model(zero_head=False)

    loss = (modl_forward(y, maps, mask, model) - target).abs().pow(2).sum()
    loss.backward()

    assert model.raw_lam.grad is not None and bool(torch.isfinite(model.raw_lam.grad))
    assert any(float(p.grad.abs().sum()) > 0 for p in model.denoiser.parameters())


def test_checkpoint_restores_lambda_and_output(tmp_path) -> None:
    samples = _samples(2)
    model = _model(zero_head=False)
    with torch.no_grad():
        model.raw_lam.fill_(0.3)
    path = save_recon_checkpoint(tmp_path / "modl.npz", model, ARCH, UnrollConfig(unrolls=2, cg_steps=3), extra={"loss": "l2"})

    loaded, payload = load_recon_checkpoint(path)

    assert payload["loss"] == "l2"
    assert float(loaded.lam) == pytest.approx(float(model.lam))
    assert np.allclose(reconstruct(loaded, samples), reconstruct(model, samples), atol=1e-5)


def test_step_seed_is_deterministic() -> None:
    assert step_seed(0, 5) == step_seed(0, 5)
    assert step_seed(0, 5) != step_seed(0, 6)


def test_train_modl_l2_arm_writes_logs_and_best_checkpoint(tmp_path) -> None:
    train = _samples(4, seed=1)
    val = _samples(2, seed=2)
    cfg = UnrollConfig(unrolls=1, cg_steps=2, epochs=2, batch_size=2, lr=1e-3)

    result = train_modl(train, val, None, ARCH, cfg, UflossConfig(patch_size=40, stride=8), out_dir=tmp_path)

    assert [row["epoch"] for row in result.history] == [1, 2]
    assert all(np.isnan(row["ufloss"]) for row in result.history)
    assert result.best_checkpoint is not None and result.best_checkpoint.exists()
    assert result.last_checkpoint is not None and result.last_checkpoint.exists()
    assert result.best_epoch in (1, 2)
    assert (tmp_path / "train_log.csv").exists()
    assert (tmp_path / "val_log.csv").exists()
    _, payload = load_recon_checkpoint(result.best_checkpoint)
    assert payload["loss"] == "l2"
    assert payload["mu"] == 0.0


def test_train_modl_ufloss_arm_reports_feature_loss(tmp_path) -> None:
    torch.manual_seed(0)
    feat_net = FeatureNet.from_arch(FeatNetArch(stage_blocks=(1,), base_width=4, feature_dim=8), 40)
    cfg = UnrollConfig(unrolls=1, cg_steps=2, epochs=1, batch_size=2, lr=1e-3)

    result = train_modl(
        _samples(2, seed=3), _samples(1, seed=4), feat_net, ARCH, cfg, UflossConfig(patch_size=40, stride=8)
    )

    row = result.history[0]
    assert 0.0 <= row["ufloss"] <= 2.0
    assert row["lam"] > 0.0
    assert not feat_net.training
    assert all(not p.requires_grad for p in feat_net.parameters())


def _small_problem_double(seed: int = 0):
    rng = np.random.default_rng(seed)
    maps = torch.from_numpy(synth_coil_maps((12, 12), 2, seed=seed))
    mask = torch.from_numpy(make_mask_1d_random((12, 12), 2.0, 0.25, seed=seed).as_float())
    image = torch.from_numpy(rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12)))
    y = encode_forward(image, maps, mask)
    return y, maps, mask, image


def test_all_zero_kspace_reconstructs_to_zero() -> None:
    _, maps, mask, _ = _small_problem_double()
    model = _model().double()

    out = modl_forward(torch.zeros((2, 12, 12), dtype=torch.complex128), maps, mask, model)

    assert float(out.abs().max()) == 0.0


def test_denoiser_gradients_match_finite_differences() -> None:
    torch.manual_seed(1)
    net = ResidualUNet(scales=2, base_channels=2, zero_head=False).double()
    x = torch.randn(1, 2, 6, 6, dtype=torch.float64, requires_grad=True)
    weight = net.head.weight.detach().clone().requires_grad_(True)

    def with_head(w: torch.Tensor) -> torch.Tensor:
        return torch.func.functional_call(net, {"head.weight": w}, (x.detach(),))

    assert torch.autograd.gradcheck(net, (x,))
    assert torch.autograd.gradcheck(with_head, (weight,))


def test_unrolled_gradients_match_finite_differences() -> None:
    y, maps, mask, image = _small_problem_double()
    model = _model(unrolls=2, cg_steps=3, zero_head=False).double()
    head = model.denoiser.head.weight.detach().clone().requires_grad_(True)
    raw_lam = model.raw_lam.detach().clone().requires_grad_(True)

    def loss(weight: torch.Tensor, lam: torch.Tensor) -> torch.Tensor:
        out = torch.func.functional_call(
            model, {"denoiser.head.weight": weight, "raw_lam": lam}, (y, maps, mask)
        )
        return (out - image).abs().pow(2).sum()

    assert torch.autograd.gradcheck(loss, (head, raw_lam), rtol=1e-2)
