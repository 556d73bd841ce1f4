import numpy as np
import pytest

from marsseg.checkpoint import Checkpoint, decode, encode, load_checkpoint, restore_model, save_checkpoint
from marsseg.config import TrainConfig
from marsseg.errors import FormatError, IntegrityError
from marsseg.losses import update_class_weights
from marsseg.network import MarsSegNet, NetworkConfig
from marsseg.optim import OptimState
from marsseg.tensor import Tensor, no_grad


def _config(widths=(8, 16, 32)):
    return TrainConfig(network=NetworkConfig.micro(3, widths, pyramid_sizes=(1, 2)))


def _checkpoint(seed=0, widths=(8, 16, 32)):
    cfg = _config(widths)
    model = MarsSegNet(cfg.network, seed=seed)
    optim = OptimState.for_params(model.parameters())
    optim.velocity[0] += 0.5
    history = {"epoch": np.array([1.0, 2.0]), "train_loss": np.array([0.9, np.nan])}
    ckpt = Checkpoint(cfg, model.state_dict(), optim, update_class_weights([0.1, 0.5, 0.7]), 2, 17, seed, history)
    return ckpt, model


def test_round_trip_preserves_everything():
    ckpt, _ = _checkpoint()
    back = decode(encode(ckpt))
    assert back.config == ckpt.config
    assert back.param_names == ckpt.param_names
    for name in ckpt.model:
        np.testing.assert_array_equal(back.model[name], ckpt.model[name])
    for a, b in zip(back.optim.velocity, ckpt.optim.velocity):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(back.weight_state.weights, ckpt.weight_state.weights)
    assert (back.epoch, back.step, back.seed) == (2, 17, 0)
    np.testing.assert_array_equal(back.history["train_loss"], ckpt.history["train_loss"])


def test_encoding_is_byte_stable(tmp_path):
    ckpt, _ = _checkpoint()
    data = encode(ckpt)
    assert encode(decode(data)) == data
    path = save_checkpoint(tmp_path / "a.ckpt", ckpt)
    assert path.read_bytes() == data
    assert encode(load_checkpoint(path)) == data


def test_truncated_file_is_integrity_error():
    data = encode(_checkpoint()[0])
    for cut in (len(data) - 1, len(data) // 2, 12):
        with pytest.raises(IntegrityError):
            decode(data[:cut])


def test_corrupted_byte_is_integrity_error():
    data = bytearray(encode(_checkpoint()[0]))
    data[len(data) // 2] ^= 0xFF
    with pytest.raises(IntegrityError):
        decode(bytes(data))


def test_bad_magic_and_version_are_format_errors():
    data = encode(_checkpoint()[0])
    with pytest.raises(FormatError, match="magic"):
        decode(b"XXXX" + data[4:])
    with pytest.raises(FormatError, match="version"):
        decode(data[:4] + (99).to_bytes(4, "little") + data[8:])


def test_mismatched_network_names_first_tensor():
    ckpt, _ = _checkpoint(widths=(8, 16, 32))
    other = MarsSegNet(_config((8, 16, 48)).network)
    with pytest.raises(FormatError, match="encoder"):
        restore_model(ckpt, other)


def test_restored_forward_is_bitwise_identical(rng):
    ckpt, model = _checkpoint(seed=1)
    model.eval()
    x = Tensor(rng.random((1, 3, 32, 32)))
    with no_grad():
        expected = model(x).data
    fresh = MarsSegNet(ckpt.config.network, seed=99)
    restore_model(decode(encode(ckpt)), fresh)
    fresh.eval()
    with no_grad():
        np.testing.assert_array_equal(fresh(x).data, expected)
