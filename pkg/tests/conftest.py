import numpy as np
import pytest
import torch

torch.set_num_threads(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_mask(rng, shape=(16, 16), p=0.5):
    return (rng.random(shape) < p).astype(np.uint8)


def blob_mask(rng, size=32):
    """A random filled rectangle-ish blob, nonempty and non-full."""
    mask = np.zeros((size, size), dtype=np.uint8)
    y0, x0 = rng.integers(2, size // 2, 2)
    y1 = rng.integers(y0 + 2, size - 1)
    x1 = rng.integers(x0 + 2, size - 1)
    mask[y0:y1, x0:x1] = 1
    return mask
