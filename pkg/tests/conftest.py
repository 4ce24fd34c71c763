import time

import numpy as np
import pytest
import torch

from vgsep.config import TrainConfig
from vgsep.data import SyntheticDatasetSpec, generate_synthetic_dataset
from vgsep.training import load_checkpoint, train

# Acceptance-grade overfit runs shared across test modules, sized for a single
# CPU core. The denoising variant converges slower than the flow variant and
# gets the bigger step budget; both must finish inside the 20-minute ceiling.
ACCEPT_SEED = 7
ACCEPT_TRAIN = {
    "ddpm": dict(batch_size=3, train_steps=1300, lr=3e-4, base_channels=24, geometry="desk"),
    "fm": dict(batch_size=3, train_steps=700, lr=3e-4, base_channels=24, geometry="desk"),
}
TRAIN_BUDGET_S = 20 * 60


@pytest.fixture(scope="session")
def acceptance_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_data")
    spec = SyntheticDatasetSpec(n_categories=4, clips_per_category=4, seed=ACCEPT_SEED)
    generate_synthetic_dataset(spec, root)
    return root


def _train_checkpoint(tmp_path_factory, dataset, variant, loss="l1"):
    out = tmp_path_factory.mktemp(f"run_{variant}_{loss}")
    config = TrainConfig(
        data_root=str(dataset), out_dir=str(out), variant=variant, loss=loss,
        seed=0, **ACCEPT_TRAIN[variant],
    )
    start = time.monotonic()
    checkpoint = load_checkpoint(train(config))
    elapsed = time.monotonic() - start
    assert elapsed < TRAIN_BUDGET_S, f"{variant}/{loss} training took {elapsed:.0f}s"
    return checkpoint


@pytest.fixture(scope="session")
def ddpm_checkpoint(tmp_path_factory, acceptance_dataset):
    return _train_checkpoint(tmp_path_factory, acceptance_dataset, "ddpm")


@pytest.fixture(scope="session")
def fm_checkpoint(tmp_path_factory, acceptance_dataset):
    return _train_checkpoint(tmp_path_factory, acceptance_dataset, "fm")


@pytest.fixture(scope="session")
def ddpm_l2_checkpoint(tmp_path_factory, acceptance_dataset):
    return _train_checkpoint(tmp_path_factory, acceptance_dataset, "ddpm", loss="l2")


def sample_param_entries(module: torch.nn.Module, n: int, seed: int = 0):
    """Pick n (tensor, flat_index) pairs spread across all parameters."""
    rng = np.random.default_rng(seed)
    params = [p for p in module.parameters() if p.numel() > 0]
    sizes = np.array([p.numel() for p in params])
    probs = sizes / sizes.sum()
    picks = []
    for _ in range(n):
        which = rng.choice(len(params), p=probs)
        picks.append((params[which], int(rng.integers(0, sizes[which]))))
    return picks


def central_difference_grad(param: torch.Tensor, index: int, loss_fn, h: float = 1e-5) -> float:
    flat = param.data.reshape(-1)
    original = flat[index].item()
    flat[index] = original + h
    up = float(loss_fn())
    flat[index] = original - h
    down = float(loss_fn())
    flat[index] = original
    return (up - down) / (2 * h)


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)
