import numpy as np
import pytest
from PIL import Image


def fd_grad(f, arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of the scalar ``f()`` w.r.t. every element
    of ``arr`` (mutated in place and restored). ``arr`` should be float64."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        keep = arr[idx]
        arr[idx] = keep + h
        up = f()
        arr[idx] = keep - h
        down = f()
        arr[idx] = keep
        g[idx] = (up - down) / (2.0 * h)
        it.iternext()
    return g


def make_clean_image(seed: int, size: int = 72) -> np.ndarray:
    """Procedural stand-in for a photograph: smooth color gradients, a few
    solid rectangles and light texture, (3, size, size) in [0, 1]."""
    rng = np.random.default_rng(seed)
    H = W = size
    yy, xx = np.mgrid[0:H, 0:W] / size
    img = np.zeros((3, H, W), np.float32)
    for c in range(3):
        freq = rng.uniform(0.5, 2.0)
        img[c] = 0.25 + 0.5 * (np.sin(2 * np.pi * (freq * xx + rng.uniform() * yy + rng.uniform())) * 0.5 + 0.5)
    for _ in range(max(4, size // 12)):
        y0, x0 = rng.integers(0, H - 10, 2)
        h, w = rng.integers(6, max(8, size // 3), 2)
        col = rng.uniform(0.05, 0.95, 3)
        img[:, y0 : y0 + h, x0 : x0 + w] = col[:, None, None]
    img += rng.normal(0, 0.02, (3, H, W)).astype(np.float32)
    return np.clip(img, 0, 1)


def write_clean_dir(path, n: int = 6, size: int = 72, seed0: int = 0):
    path.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        arr = make_clean_image(seed0 + i, size)
        Image.fromarray((arr.transpose(1, 2, 0) * 255).round().astype(np.uint8)).save(path / f"{i}.png")
    return path


@pytest.fixture
def clean_dir(tmp_path):
    return write_clean_dir(tmp_path / "clean")
