import math

import numpy as np
import pytest
import torch
from safetensors.torch import save_file

from hidden_physics.autodiff import DTYPE
from hidden_physics.errors import CheckpointError, ConfigurationError
from hidden_physics.neural import (
    Mlp,
    MlpCheckpoint,
    init_glorot,
    load_checkpoint,
    read_checkpoint_metadata,
    save_checkpoint,
    zero_network,
)


class TestInitialization:
    def test_zero_bias_at_origin(self):
        net = init_glorot([2, 1], seed=42)
        assert float(net(torch.zeros(1, 2, dtype=DTYPE))[0, 0]) == 0.0

    def test_deterministic_per_seed(self):
        assert torch.equal(init_glorot([2, 32, 32, 2], 7).flat_parameters(),
                           init_glorot([2, 32, 32, 2], 7).flat_parameters())
        assert not torch.equal(init_glorot([2, 32, 2], 7).flat_parameters(),
                               init_glorot([2, 32, 2], 8).flat_parameters())

    def test_glorot_bound(self):
        net = init_glorot([2, 32, 32, 2], seed=7)
        bound = math.sqrt(6.0 / 34.0)
        assert float(net.layers[0].weight.abs().max()) <= bound
        for layer in net.layers:
            assert torch.all(layer.bias == 0)

    @pytest.mark.parametrize("widths", [[], [3], [2, 0, 1], [2, -4, 1]])
    def test_invalid_widths(self, widths):
        with pytest.raises(ConfigurationError):
            init_glorot(widths, seed=0)


class TestForward:
    def test_zero_weights_give_final_bias(self):
        net = zero_network([3, 4, 2])
        with torch.no_grad():
            net.layers[-1].bias.copy_(torch.tensor([0.5, -1.5], dtype=DTYPE))
        out = net(torch.randn(5, 3, dtype=DTYPE))
        assert torch.all(out == torch.tensor([0.5, -1.5], dtype=DTYPE))

    def test_single_affine_layer(self):
        net = Mlp([1, 1])
        with torch.no_grad():
            net.layers[0].weight.fill_(2.0)
            net.layers[0].bias.fill_(1.0)
        assert float(net(torch.tensor([[3.0]], dtype=DTYPE))[0, 0]) == 7.0

    def test_matches_hand_rolled_matrices(self):
        net = init_glorot([2, 4, 1], seed=9)
        with torch.no_grad():
            net.layers[0].bias.copy_(torch.tensor([0.1, -0.2, 0.3, 0.0], dtype=DTYPE))
            net.layers[1].bias.fill_(0.05)
        w1, b1 = net.layers[0].weight.detach().numpy(), net.layers[0].bias.detach().numpy()
        w2, b2 = net.layers[1].weight.detach().numpy(), net.layers[1].bias.detach().numpy()
        x = np.array([[0.4, -0.7], [1.0, 2.0]])
        expected = np.tanh(x @ w1.T + b1) @ w2.T + b2
        got = net(torch.as_tensor(x, dtype=DTYPE)).detach().numpy()
        np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-13)

    def test_width_mismatch(self):
        with pytest.raises(ConfigurationError):
            init_glorot([2, 3, 1], seed=0)(torch.zeros(4, 3, dtype=DTYPE))


class TestCheckpoints:
    def test_round_trip_is_bit_exact(self, tmp_path):
        net = init_glorot([2, 16, 16, 2], seed=3)
        path = save_checkpoint(net, tmp_path / "net.safetensors", step=120, extras={"role": "hidden"})
        loaded = load_checkpoint(path)
        inputs = torch.randn(100, 2, dtype=DTYPE, generator=torch.Generator().manual_seed(1))
        with torch.no_grad():
            assert torch.equal(net(inputs), loaded(inputs))
        assert loaded.widths == [2, 16, 16, 2]
        assert loaded.seed == 3
        assert loaded.step == 120
        assert loaded.extras == {"role": "hidden"}

    def test_metadata_carries_version(self, tmp_path):
        path = save_checkpoint(init_glorot([1, 2], seed=0), tmp_path / "net.safetensors")
        assert read_checkpoint_metadata(path)["format_version"] == "1"

    def test_truncated_file(self, tmp_path):
        path = save_checkpoint(init_glorot([2, 8, 1], seed=0), tmp_path / "net.safetensors")
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_header(self, tmp_path):
        path = save_checkpoint(init_glorot([2, 8, 1], seed=0), tmp_path / "net.safetensors")
        path.write_bytes(path.read_bytes()[:20])
        with pytest.raises(CheckpointError, match="header"):
            read_checkpoint_metadata(path)

    def test_corrupt_header(self, tmp_path):
        path = tmp_path / "net.safetensors"
        body = b"{not json at all"
        path.write_bytes(len(body).to_bytes(8, "little") + body)
        with pytest.raises(CheckpointError, match="header"):
            read_checkpoint_metadata(path)

    def test_metadata_of_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            read_checkpoint_metadata(tmp_path / "absent.safetensors")

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "net.safetensors"
        path.write_bytes(b"abc")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        net = init_glorot([1, 2], seed=0)
        header = MlpCheckpoint(format_version=99, widths=net.widths, seed=0).to_metadata()
        path = tmp_path / "future.safetensors"
        save_file({k: v.contiguous() for k, v in net.state_dict().items()}, str(path), metadata=header)
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_missing_version_stamp(self, tmp_path):
        net = init_glorot([1, 2], seed=0)
        path = tmp_path / "bare.safetensors"
        save_file({k: v.contiguous() for k, v in net.state_dict().items()}, str(path))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_architecture_mismatch(self, tmp_path):
        net = init_glorot([1, 2], seed=0)
        header = MlpCheckpoint(widths=[1, 3], seed=0).to_metadata()
        path = tmp_path / "wrong.safetensors"
        save_file({k: v.contiguous() for k, v in net.state_dict().items()}, str(path), metadata=header)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.safetensors")
