import numpy as np
import pytest
import torch

from uflossmri.config.schemas import FeatNetArch, FeatTrainConfig
from uflossmri.data.phantoms import make_phantom_dataset
from uflossmri.featnet.bank import MemoryBank, instance_probability
from uflossmri.featnet.network import FeatureNet, embed_patches, feature_map
from uflossmri.featnet.train import (
    PatchDataset,
    build_feature_bank,
    contrastive_loss,
    load_feature_checkpoint,
    pretrain_ufnet,
)

ARCH = FeatNetArch(stage_blocks=(1,), base_width=4, feature_dim=8)


def _net(patch_size: int = 8) -> FeatureNet:
    torch.manual_seed(0)
    return FeatureNet.from_arch(ARCH, patch_size)


def _patches(count: int, size: int = 8, seed: int = 0) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    return torch.complex(
        torch.randn(count, size, size, generator=generator),
        torch.randn(count, size, size, generator=generator),
    )


def test_features_are_unit_norm_for_both_input_views() -> None:
    net = _net().eval()
    patches = _patches(3)

    features = net(patches)
    channels = torch.stack((patches.real, patches.imag), dim=1)

    assert features.shape == (3, 8)
    assert torch.allclose(torch.linalg.vector_norm(features, dim=1), torch.ones(3), atol=1e-6)
    assert torch.allclose(net(channels), features)
    assert torch.allclose(feature_map(patches[0], net), features[0], atol=1e-6)


def test_feature_net_rejects_wrong_patch_size() -> None:
    with pytest.raises(ValueError, match="does not match the trained size"):
        _net()(_patches(2, size=10))
    with pytest.raises(ValueError, match="Unknown stem"):
        FeatureNet(8, stem="vgg")


def test_resnet_stem_handles_published_patch_size() -> None:
    net = FeatureNet(60, stage_blocks=(1, 1), base_width=4, feature_dim=16, stem="resnet").eval()

    assert net(_patches(2, size=60)).shape == (2, 16)


def test_memory_bank_update_replaces_or_blends_rows() -> None:
    bank = MemoryBank.random(5, 4, seed=1)
    fresh = torch.nn.functional.normalize(torch.ones(2, 4), dim=1)

    bank.update(torch.tensor([0, 3]), fresh)

    assert torch.allclose(bank.vectors[[0, 3]], fresh)
    assert bank.norm_error() < 1e-6
    before = bank.vectors[1].clone()
    bank.update(torch.tensor([1]), fresh[:1], momentum=0.5)
    assert not torch.allclose(bank.vectors[1], before)
    assert bank.norm_error() < 1e-6
    with pytest.raises(ValueError, match="momentum"):
        bank.update(torch.tensor([1]), fresh[:1], momentum=1.0)
    with pytest.raises(ValueError, match="N >= 1"):
        MemoryBank(torch.zeros(0, 4))


def test_instance_probability_sums_to_one() -> None:
    bank = MemoryBank.random(7, 4, seed=2, dtype=torch.float64)
    v = bank.vectors[:3]

    probabilities = instance_probability(v, bank, tau=0.07)

    assert torch.allclose(probabilities.sum(dim=-1), torch.ones(3, dtype=torch.float64))
    with pytest.raises(ValueError, match="tau"):
        instance_probability(v, bank, tau=0.0)


def test_contrastive_loss_is_negative_log_probability() -> None:
    net = _net().eval()
    bank = MemoryBank.random(6, 8, seed=3)
    indices = torch.tensor([1, 4])

    loss, features = contrastive_loss(net, _patches(2), indices, bank, tau=1.0)

    expected = -torch.log(instance_probability(features, bank, 1.0)[torch.arange(2), indices]).mean()
    assert float(loss) == pytest.approx(float(expected), rel=1e-5)
    with pytest.raises(ValueError, match="out of range"):
        contrastive_loss(net, _patches(2), torch.tensor([0, 6]), bank, tau=1.0)


def test_patch_dataset_crops_match_origins() -> None:
    dataset = make_phantom_dataset(2, seed=0)
    patches = PatchDataset.sample(dataset, 3, 40, seed=1)

    assert len(patches) == 6
    slice_index, row, col = patches.origins[4]
    expected = dataset.images()[slice_index, row:row + 40, col:col + 40]
    assert np.allclose(patches.crop(4).numpy(), expected, atol=1e-6)
    channels, index = patches[4]
    assert channels.shape == (2, 40, 40)
    assert index == 4


def test_pretrain_writes_checkpoint_that_reloads(tmp_path) -> None:
    dataset = make_phantom_dataset(2, seed=0)
    cfg = FeatTrainConfig(epochs=2, batch=4, patches_per_slice=4, patch_size=40, lr=1e-3)
    checkpoint = tmp_path / "ufnet.npz"
    log_path = tmp_path / "pretrain_log.csv"

    result = pretrain_ufnet(dataset, ARCH, cfg, seed=0, checkpoint_path=checkpoint, log_path=log_path)

    assert [row["epoch"] for row in result.history] == [1, 2]
    assert all(np.isfinite(row["mean_loss"]) for row in result.history)
    assert result.bank.norm_error() < 1e-6
    # patch identities stay fixed across epochs
    assert np.array_equal(result.origins, PatchDataset.sample(dataset, 4, 40, seed=0).origins)
    assert log_path.exists()

    net, bank, payload = load_feature_checkpoint(checkpoint)
    assert len(bank) == 8
    assert np.array_equal(payload["origins"], result.origins)
    crops = PatchDataset(dataset.images(), result.origins, 40).crops()
    assert torch.allclose(embed_patches(net, crops), embed_patches(result.net, crops), atol=1e-5)


def test_build_feature_bank_matches_embeddings() -> None:
    dataset = make_phantom_dataset(1, seed=5)
    net = _net(40).eval()
    origins = np.array([[0, 0, 0], [0, 10, 20], [0, 24, 24]])

    bank = build_feature_bank(net, dataset.images(), origins, 40, batch_size=2)

    expected = embed_patches(net, PatchDataset(dataset.images(), origins, 40).crops())
    assert len(bank) == 3
    assert torch.allclose(bank.vectors, expected, atol=1e-6)


def test_instance_probability_closed_forms() -> None:
    v1 = torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64)
    v2 = torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64)

    two = instance_probability(v1, MemoryBank(torch.stack([v1, v2])), tau=1.0)
    same = instance_probability(v1, MemoryBank(torch.stack([v1, v1, v1, v1])), tau=1.0)
    hot = instance_probability(v1, MemoryBank(torch.stack([v1, v2, -v1])), tau=1e6)

    assert float(two[0]) == pytest.approx(np.e / (np.e + 1.0), abs=1e-12)
    assert float(two[1]) == pytest.approx(1.0 / (np.e + 1.0), abs=1e-12)
    assert torch.allclose(same, torch.full((4,), 0.25, dtype=torch.float64))
    assert torch.allclose(hot, torch.full((3,), 1.0 / 3.0, dtype=torch.float64), atol=1e-5)


def _orthogonal_bank(feature: torch.Tensor, rows: int) -> MemoryBank:
    generator = torch.Generator().manual_seed(5)
    extra = torch.randn(feature.shape[0], rows - 1, generator=generator, dtype=feature.dtype)
    q, _ = torch.linalg.qr(torch.cat([feature[:, None], extra], dim=1))
    return MemoryBank(torch.cat([feature[None], q[:, 1:].T], dim=0))


def test_contrastive_loss_closed_form_with_orthogonal_bank() -> None:
    net = _net().double().eval()
    patch = _patches(1).to(torch.complex128)
    feature = net(patch)[0].detach()
    bank = _orthogonal_bank(feature, rows=5)

    loss, _ = contrastive_loss(net, patch, torch.tensor([0]), bank, tau=1.0)
    single, _ = contrastive_loss(net, patch, torch.tensor([0]), MemoryBank(bank.vectors[:1]), tau=1.0)

    assert float(loss) == pytest.approx(-np.log(np.e / (np.e + 4.0)), abs=1e-9)
    assert float(single) == pytest.approx(0.0, abs=1e-12)


def test_contrastive_loss_gradients_match_finite_differences() -> None:
    net = _net().double().eval()
    patches = _patches(2).to(torch.complex128)
    bank = MemoryBank.random(6, 8, seed=4, dtype=torch.float64)
    indices = torch.tensor([2, 5])
    head = net.head.weight.detach().clone().requires_grad_(True)

    def loss_of_head(weight: torch.Tensor) -> torch.Tensor:
        def patched(batch: torch.Tensor) -> torch.Tensor:
            return torch.func.functional_call(net, {"head.weight": weight}, (batch,))

        return contrastive_loss(patched, patches, indices, bank, tau=0.5)[0]

    channels = torch.stack((patches.real, patches.imag), dim=1).requires_grad_(True)

    assert torch.autograd.gradcheck(loss_of_head, (head,))
    assert torch.autograd.gradcheck(lambda x: contrastive_loss(net, x, indices, bank, tau=0.5)[0], (channels,))
