import numpy as np
import pytest

from sixdpose.augment import AugmentationConfig, identity_config
from sixdpose.train import AdamState, TrainConfig, load_checkpoint, save_checkpoint, train
from sixdpose.encoder import init_params, loss_and_grads

TOY_CFG = TrainConfig(
    latent_dim=8,
    batch_size=4,
    iterations=5,
    seed=3,
    crop_size=16,
    conv_channels=(4, 8),
    dtype="float64",
)


def toy_dataset(n=12, size=16, seed=0):
    rng = np.random.default_rng(seed)
    data = []
    for _ in range(n):
        crop = rng.uniform(size=(size, size, 3))
        mask = rng.uniform(size=(size, size)) > 0.4
        crop[~mask] = 0.0
        data.append((crop, mask))
    return data


def toy_backgrounds(n=3, size=40, seed=1):
    rng = np.random.default_rng(seed)
    return [rng.uniform(size=(size, size, 3)) for _ in range(n)]


class TestTrain:
    def test_zero_iterations_returns_init(self):
        cfg = TrainConfig(**{**TOY_CFG.to_json(), "iterations": 0})
        params, curve = train(cfg, toy_dataset(), identity_config(), toy_backgrounds())
        init = init_params(cfg.architecture(), seed=cfg.seed, dtype=np.float64)
        assert curve == []
        for name in params.tensors:
            assert np.array_equal(params.tensors[name], init.tensors[name])

    def test_deterministic_loss_curves(self):
        aug = AugmentationConfig(square_occlusion_fraction=0.4)
        run1 = train(TOY_CFG, toy_dataset(), aug, toy_backgrounds())
        run2 = train(TOY_CFG, toy_dataset(), aug, toy_backgrounds())
        assert run1[1] == run2[1]  # bit-identical curves
        for name in run1[0].tensors:
            assert np.array_equal(run1[0].tensors[name], run2[0].tensors[name])

    def test_rejects_empty_dataset(self):
        with pytest.raises(ValueError):
            train(TOY_CFG, [], identity_config(), toy_backgrounds())

    def test_rejects_crop_size_mismatch(self):
        with pytest.raises(ValueError):
            train(TOY_CFG, toy_dataset(size=32), identity_config(), toy_backgrounds())

    def test_nan_input_aborts_with_iteration(self):
        data = toy_dataset()
        crop, mask = data[0]
        crop = crop.copy()
        crop[0, 0, 0] = np.nan
        data[0] = (crop, mask)
        with pytest.raises(RuntimeError, match="iteration"):
            train(TOY_CFG, data, identity_config(), toy_backgrounds())


class TestAdam:
    def test_moves_against_gradient(self):
        cfg = TrainConfig(**{**TOY_CFG.to_json(), "learning_rate": 0.01})
        params = init_params(cfg.architecture(), seed=0, dtype=np.float64)
        rng = np.random.default_rng(1)
        x = rng.uniform(size=(2, 16, 16, 3))
        t = rng.uniform(size=(2, 16, 16, 3))
        before, grads = loss_and_grads(params, x, t)
        adam = AdamState(params)
        for _ in range(20):
            _, grads = loss_and_grads(params, x, t)
            adam.step(params, grads, cfg)
        after, _ = loss_and_grads(params, x, t)
        assert after < before

    def test_step_size_bounded_by_lr(self):
        cfg = TrainConfig(**{**TOY_CFG.to_json(), "learning_rate": 0.5})
        params = init_params(cfg.architecture(), seed=0, dtype=np.float64)
        snapshot = {k: v.copy() for k, v in params.tensors.items()}
        rng = np.random.default_rng(1)
        x = rng.uniform(size=(1, 16, 16, 3))
        t = rng.uniform(size=(1, 16, 16, 3))
        _, grads = loss_and_grads(params, x, t)
        AdamState(params).step(params, grads, cfg)
        for name in params.tensors:
            delta = np.abs(params.tensors[name] - snapshot[name]).max()
            # after bias correction the first step is at most ~lr per weight
            assert delta <= cfg.learning_rate * 1.0001


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params, _ = train(TOY_CFG, toy_dataset(), identity_config(), toy_backgrounds())
        path = tmp_path / "enc.bin"
        save_checkpoint(path, params, TOY_CFG)
        loaded, cfg = load_checkpoint(path)
        assert cfg == TOY_CFG
        assert loaded.arch == params.arch
        for name in params.tensors:
            assert np.array_equal(loaded.tensors[name], params.tensors[name].astype(np.float64))

    def test_magic_check(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        params, _ = train(TOY_CFG, toy_dataset(), identity_config(), toy_backgrounds())
        path = tmp_path / "enc.bin"
        save_checkpoint(path, params, TOY_CFG)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 16])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(path)


class TestTrainConfig:
    def test_json_round_trip(self):
        assert TrainConfig.from_json(TOY_CFG.to_json()) == TOY_CFG

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
