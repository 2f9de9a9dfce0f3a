import numpy as np
import pytest

from nervesynth import train as TR
from nervesynth.errors import ConfigError, NumericalError
from nervesynth.model import Mmdit, MmditConfig
from nervesynth.tensor import Tensor

SMALL = MmditConfig(image_size=8, patch_size=4, embed_dim=16, n_blocks=1, n_heads=2)


def test_smooth():
    np.testing.assert_allclose(TR.smooth([1, 2, 3, 4], 2), [1, 1.5, 2.5, 3.5])
    assert TR.smooth(np.ones(10), 100).tolist() == [1.0] * 10


def test_config_validation():
    with pytest.raises(ConfigError):
        TR.TrainConfig(max_steps=0)
    with pytest.raises(ConfigError):
        TR.TrainConfig(lr=0)


def test_fit_logs_and_is_deterministic(tmp_path, rng):
    imgs = rng.uniform(size=(6, 8, 8))
    masks = (rng.uniform(size=(6, 8, 8)) > 0.5).astype(float)
    labels = np.array([0, 1, 2, 0, 1, 2])
    runs = []
    for i in range(2):
        m = Mmdit(SMALL)
        m.attach("wdlora", 2)
        runs.append(TR.fit(m, imgs, masks, labels, TR.TrainConfig(lr=1e-2, max_steps=15, batch_size=4),
                           log_path=tmp_path / f"l{i}.csv"))
    assert runs[0] == runs[1]
    assert (tmp_path / "l0.csv").read_bytes() == (tmp_path / "l1.csv").read_bytes()


def test_fit_rejects_non_finite(rng):
    class Broken(Mmdit):
        def forward(self, *a):
            return super().forward(*a) * np.nan

    m = Broken(SMALL)
    with pytest.raises(NumericalError):
        TR.fit(m, rng.uniform(size=(2, 8, 8)), np.zeros((2, 8, 8)), [0, 1], TR.TrainConfig(max_steps=3))


def test_fit_needs_trainables(rng):
    m = Mmdit(SMALL)
    m.freeze()
    with pytest.raises(ConfigError):
        TR.fit(m, rng.uniform(size=(2, 8, 8)), np.zeros((2, 8, 8)), [0, 1], TR.TrainConfig(max_steps=1))


def test_grad_clip():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.array([3.0, 4.0])
    assert TR._clip_grads([p], 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(p.grad, [0.6, 0.8])
