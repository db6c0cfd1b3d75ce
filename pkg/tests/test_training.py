"""Objective, optimizer, training loop, gradient check, checkpoint format."""

import numpy as np
import pytest

from ampnet import tensor as tz
from ampnet.data import Dataset, Sequence, gen_minworld
from ampnet.errors import FormatError, InvalidArgumentError, TrainingDivergedError
from ampnet.network import NetworkConfig, init_parameters, rollout
from ampnet.tensor import Tensor
from ampnet.training import (Adam, Checkpoint, TrainConfig, compute_loss, gradient_check,
                             load_checkpoint, save_checkpoint, train)

TINY = dict(num_layers=1, height=4, width=4, channels=1, action_dim=2,
            gu_per_layer=2, r_channels=(2,), du_channels=(), mlp_hidden=3)


def tiny_dataset(n_seq=3, steps=4, seed=0):
    rng = np.random.default_rng(seed)
    seqs = [Sequence(frames=rng.uniform(0, 1, size=(steps, 1, 4, 4)),
                     actions=rng.uniform(0, 1, size=(steps, 2)))
            for _ in range(n_seq)]
    return Dataset(height=4, width=4, channels=1, action_dim=2, sequences=seqs)


class TestLoss:
    def test_perfect_prediction_gives_zero(self):
        zeros = Tensor(np.zeros((2, 4, 4)))
        loss = compute_loss([[zeros], [zeros], [zeros]])
        assert loss.item() == 0.0

    def test_single_unit_error_mean(self):
        err = np.zeros((2, 8, 12), dtype=np.float32)
        err[0, 3, 5] = 1.0
        loss = compute_loss([[Tensor(np.zeros((2, 8, 12)))], [Tensor(err)]])
        assert loss.item() == pytest.approx(1.0 / 192.0, rel=1e-6)

    def test_layer_weight_scales_linearly(self):
        err = np.abs(np.random.default_rng(0).normal(size=(2, 4, 4)))
        steps = [[Tensor(np.zeros((2, 4, 4)))], [Tensor(err)]]
        base = compute_loss(steps, lambda_layer0=1.0).item()
        doubled = compute_loss(steps, lambda_layer0=2.0).item()
        assert doubled == pytest.approx(2.0 * base, rel=1e-6)

    def test_first_timestep_excluded(self):
        hot = np.ones((2, 4, 4))
        loss = compute_loss([[Tensor(hot)], [Tensor(np.zeros((2, 4, 4)))]])
        assert loss.item() == 0.0

    def test_needs_two_timesteps(self):
        with pytest.raises(InvalidArgumentError):
            compute_loss([[Tensor(np.zeros((2, 4, 4)))]])

    def test_zero_loss_region_gives_zero_gradients(self):
        cfg = NetworkConfig(**TINY)
        params = init_parameters(cfg, np.random.default_rng(0))
        for t in params.named().values():
            t.data = np.zeros_like(t.data)
        seq = Sequence(frames=np.zeros((3, 1, 4, 4)), actions=np.zeros((3, 2)))
        result = rollout(params, seq)
        loss = compute_loss(result.errors)
        assert loss.item() == 0.0
        loss.backward()
        for name, t in params.named().items():
            if t.grad is not None:
                assert not t.grad.any(), name


class TestAdam:
    def test_zero_gradient_leaves_parameters_unchanged(self):
        p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        before = p.data.copy()
        opt = Adam({"p": p})
        opt.step()  # grad is None -> treated as zero
        assert np.array_equal(p.data, before)

    def test_step_moves_against_gradient(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam({"p": p}, learning_rate=0.1)
        p.grad = np.array([1.0], dtype=np.float32)
        opt.step()
        assert p.data[0] < 1.0


class TestTrain:
    def test_deterministic_given_seed(self, tmp_path):
        ds = tiny_dataset()
        cfg = NetworkConfig(**TINY)
        tc = TrainConfig(max_iterations=5, seed=42)
        ck1, losses1 = train(ds, tc, cfg)
        ck2, losses2 = train(ds, tc, cfg)
        assert losses1 == losses2
        p1, p2 = tmp_path / "a.afac", tmp_path / "b.afac"
        save_checkpoint(p1, ck1)
        save_checkpoint(p2, ck2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_huge_threshold_stops_after_one_iteration(self):
        ds = tiny_dataset()
        cfg = NetworkConfig(**TINY)
        _, losses = train(ds, TrainConfig(max_iterations=50, error_threshold=1e30), cfg)
        assert len(losses) == 1

    def test_loss_decreases_on_tiny_problem(self):
        ds = tiny_dataset(n_seq=2, steps=4)
        cfg = NetworkConfig(**TINY)
        _, losses = train(ds, TrainConfig(max_iterations=60, seed=1), cfg)
        assert np.mean(losses[-10:]) < np.mean(losses[:10])

    def test_nan_loss_aborts_with_layer_diagnostic(self):
        ds = tiny_dataset()
        cfg = NetworkConfig(**TINY)
        params = init_parameters(cfg, np.random.default_rng(0))
        bad = params.layers[0].pred_k
        bad.data = np.full_like(bad.data, np.nan)
        with pytest.raises(TrainingDivergedError, match="iteration 1"):
            train(ds, TrainConfig(max_iterations=3), cfg, params=params)

    def test_dataset_dims_validated(self):
        ds = tiny_dataset()
        cfg = NetworkConfig()  # 8x12 network vs 4x4 data
        with pytest.raises(InvalidArgumentError):
            train(ds, TrainConfig(max_iterations=1), cfg)

    def test_invalid_train_config_rejected(self):
        with pytest.raises(InvalidArgumentError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(InvalidArgumentError):
            TrainConfig(lambda_layer0=0.0)


class TestGradientCheck:
    def test_tiny_instance_passes(self):
        report = gradient_check(NetworkConfig(**TINY), timesteps=3)
        assert report.passed and report.max_rel_err < 1e-4

    def test_corrupted_gradient_detected_and_named(self):
        report = gradient_check(NetworkConfig(**TINY), timesteps=2,
                                _corrupt="layer0.mm.b2")
        assert not report.passed
        assert report.worst == "layer0.mm.b2"

    def test_zero_tolerance_fails(self):
        report = gradient_check(NetworkConfig(**TINY), timesteps=2, tol=0.0)
        assert not report.passed

    def test_unknown_corrupt_name_rejected(self):
        with pytest.raises(InvalidArgumentError):
            gradient_check(NetworkConfig(**TINY), timesteps=2, _corrupt="nope")

    def test_bptt_gradient_equals_sum_of_per_step_contributions(self):
        # linearity of the backward accumulation over the time dimension
        with tz.use_float64():
            cfg = NetworkConfig(**TINY)
            rng = np.random.default_rng(5)
            params = init_parameters(cfg, rng)
            named = params.named()
            for p in named.values():
                p.data = p.data + rng.normal(scale=0.05, size=p.data.shape)
            seq = Sequence(frames=rng.uniform(0, 1, size=(4, 1, 4, 4)),
                           actions=rng.uniform(0, 1, size=(4, 2)))
            result = rollout(params, seq)
            loss = compute_loss(result.errors)
            loss.backward()
            total = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                     for k, p in named.items()}
            for p in named.values():
                p.grad = None
            accumulated = {k: np.zeros_like(p.data) for k, p in named.items()}
            for t in range(1, 4):
                result_t = rollout(params, seq)
                step_loss = compute_loss([result_t.errors[0], result_t.errors[t]])
                step_loss.backward()
                for k, p in named.items():
                    if p.grad is not None:
                        accumulated[k] += p.grad
                    p.grad = None
            for k in total:
                assert np.allclose(total[k], accumulated[k], atol=1e-10), k


class TestCheckpointFormat:
    def make(self, seed=0):
        cfg = NetworkConfig(**TINY)
        return Checkpoint.from_parameters(init_parameters(cfg, np.random.default_rng(seed)))

    def test_roundtrip_bitwise(self, tmp_path):
        ck = self.make()
        path = tmp_path / "m.afac"
        save_checkpoint(path, ck)
        back = load_checkpoint(path)
        assert back.config == ck.config
        assert set(back.tensors) == set(ck.tensors)
        for name in ck.tensors:
            assert ck.tensors[name].tobytes() == back.tensors[name].tobytes()

    def test_to_parameters_roundtrip(self, tmp_path):
        ck = self.make()
        path = tmp_path / "m.afac"
        save_checkpoint(path, ck)
        params = load_checkpoint(path).to_parameters()
        again = Checkpoint.from_parameters(params)
        for name in ck.tensors:
            assert ck.tensors[name].tobytes() == again.tensors[name].tobytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.afac"
        save_checkpoint(path, self.make())
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncation_is_an_error_not_a_crash(self, tmp_path):
        path = tmp_path / "m.afac"
        save_checkpoint(path, self.make())
        raw = path.read_bytes()
        for cut in (3, 7, 11, len(raw) // 2, len(raw) - 2):
            path.write_bytes(raw[:cut])
            with pytest.raises(FormatError) as err:
                load_checkpoint(path)
            assert err.value.offset is not None

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "m.afac"
        save_checkpoint(path, self.make())
        raw = bytearray(path.read_bytes())
        raw[4:8] = (2).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            load_checkpoint(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "m.afac"
        save_checkpoint(path, self.make())
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(FormatError, match="trailing"):
            load_checkpoint(path)

    def test_minworld_defaults_roundtrip(self, tmp_path):
        cfg = NetworkConfig()
        ck = Checkpoint.from_parameters(init_parameters(cfg, np.random.default_rng(1)))
        path = tmp_path / "mw.afac"
        save_checkpoint(path, ck)
        assert load_checkpoint(path).config == cfg
