import numpy as np
import pytest
import torch

from uflossmri.data.patches import Patch, grid_origins, grid_shape
from uflossmri.data.phantoms import make_phantom_dataset
from uflossmri.eval.retrieval import (
    _ranked,
    correlation_map,
    retrieve_farthest,
    retrieve_neighbors,
    ssim_correlation_map,
)
from uflossmri.featnet.bank import MemoryBank
from uflossmri.featnet.network import FeatureNet, embed_patches
from uflossmri.featnet.train import PatchDataset, build_feature_bank


def _net() -> FeatureNet:
    torch.manual_seed(0)
    return FeatureNet(40, stage_blocks=(1,), base_width=4, feature_dim=8).eval()


def _training_patches() -> PatchDataset:
    dataset = make_phantom_dataset(3, seed=8)
    return PatchDataset.sample(dataset, 4, 40, seed=2)


def test_ranking_breaks_ties_toward_lower_index() -> None:
    scores = np.array([0.5, 0.9, 0.9, 0.1, 0.5])

    assert _ranked(scores, 3, descending=True) == [(1, 0.9), (2, 0.9), (0, 0.5)]
    assert _ranked(scores, 3, descending=False) == [(3, 0.1), (0, 0.5), (4, 0.5)]
    with pytest.raises(ValueError, match=r"k must lie in \[1, 5\]"):
        _ranked(scores, 6, descending=True)
    with pytest.raises(ValueError, match="k must lie"):
        _ranked(scores, 0, descending=True)


def test_patch_retrieves_itself_first() -> None:
    net = _net()
    patches = _training_patches()
    bank = build_feature_bank(net, patches.images.numpy(), patches.origins, 40)
    query = Patch(patches.crop(5).numpy(), tuple(patches.origins[5][1:]), "5")

    nearest = retrieve_neighbors(query, net, bank, 3)
    farthest = retrieve_farthest(query, net, bank, 2)

    top = nearest[0][0]
    assert top == 5 or torch.equal(patches.crop(top), patches.crop(5))
    assert nearest[0][1] == pytest.approx(1.0, abs=1e-5)
    assert [score for _, score in nearest] == sorted((score for _, score in nearest), reverse=True)
    assert farthest[0][1] <= farthest[1][1] <= nearest[-1][1]


def test_correlation_maps_peak_at_the_source_origin() -> None:
    item = make_phantom_dataset(1, seed=9)[0]
    origins = grid_origins(item.shape, 40, 8)
    index = len(origins) // 2
    row, col = origins[index]
    source = Patch(item.image[row:row + 40, col:col + 40].copy(), (row, col), item.slice_id)

    feature_values = correlation_map(source, item, _net(), 8)
    ssim_values = ssim_correlation_map(source, item, 8)

    shape = grid_shape(item.shape, 40, 8)
    assert feature_values.shape == shape
    assert ssim_values.shape == shape
    assert np.all((feature_values >= -1.0) & (feature_values <= 1.0))
    assert feature_values.reshape(-1)[index] == pytest.approx(1.0, abs=1e-5)
    assert ssim_values.reshape(-1)[index] == pytest.approx(1.0)


@pytest.mark.parametrize("k", [1, 5, 20])
def test_top_k_matches_an_exhaustive_sort(k: int) -> None:
    net = _net()
    bank = MemoryBank.random(300, 8, seed=k)
    rng = np.random.default_rng(k)
    pixels = rng.standard_normal((40, 40)) + 1j * rng.standard_normal((40, 40))
    query = Patch(pixels, (0, 0), "query")

    feature = embed_patches(net, pixels[None])[0]
    scores = (bank.vectors.to(feature) @ feature).detach().double().numpy()
    exhaustive = sorted(range(len(bank)), key=lambda index: (-scores[index], index))

    nearest = retrieve_neighbors(query, net, bank, k)
    farthest = retrieve_farthest(query, net, bank, k)

    assert [index for index, _ in nearest] == exhaustive[:k]
    assert [index for index, _ in farthest] == exhaustive[::-1][:k]
    assert [score for _, score in nearest] == pytest.approx([scores[index] for index in exhaustive[:k]])
