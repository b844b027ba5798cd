import numpy as np
import pytest

from aemsr.autograd import Tensor, check_gradients, no_grad
from aemsr.errors import AlignmentError, ConfigurationError
from aemsr.temporal import (LayerSpec, ResNet1DBlock, StreamSpec, TCNBlock, TemporalStream, audio_stream,
                            audio_stream_spec, receptive_field, video_stream, video_stream_spec)

from gradcases import BLOCKS


def tcn_stack(seed, channels=4, blocks=3):
    rng = np.random.default_rng(seed)
    stack = [TCNBlock(channels, 2 ** i, rng, kernel=3) for i in range(blocks)]
    for b in stack:
        b.eval()
        for p in b.parameters():
            p.data += 0.2 * rng.standard_normal(p.shape)
    return stack


def run_stack(stack, x):
    h = Tensor(x)
    with no_grad():
        for b in stack:
            h = b(h)
    return h.data


@pytest.mark.parametrize("seed", range(5))
def test_future_perturbation_leaves_past_identical(seed):
    rng = np.random.default_rng(seed)
    stack = tcn_stack(seed)
    x = rng.standard_normal((2, 4, 40))
    t = int(rng.integers(1, 40))
    y = x.copy()
    y[:, :, t:] += rng.standard_normal((2, 4, 40 - t))
    a, b = run_stack(stack, x), run_stack(stack, y)
    assert a[:, :, :t].tobytes() == b[:, :, :t].tobytes()


def test_impulse_response_support():
    assert receptive_field(3, [1, 2, 4]) == 29
    stack = tcn_stack(0, channels=3)
    base = np.zeros((1, 3, 60))
    probe = base.copy()
    probe[0, :, 10] = 1.0
    diff = np.abs(run_stack(stack, probe) - run_stack(stack, base)).max(axis=1)[0]
    assert diff[:10].max() == 0.0
    assert diff[10 + 28 + 1:].max() == 0.0
    assert diff[10:10 + 29].max() > 0.0


@pytest.mark.parametrize("name", ["tcn_block", "tcn_up_block", "resnet1d_block",
                                  "resnet1d_block_stride2", "resnet1d_up_block"])
@pytest.mark.parametrize("seed", [0, 1])
def test_block_gradients(name, seed):
    fn, tensors = BLOCKS[name](seed)
    errs = check_gradients(fn, tensors, max_entries=4, rng=np.random.default_rng(seed))
    assert max(errs.values()) < 1e-4, errs


def test_resnet_block_shapes():
    rng = np.random.default_rng(0)
    assert ResNet1DBlock(6, rng)(rng.standard_normal((2, 6, 12))).shape == (2, 6, 12)
    assert ResNet1DBlock(6, rng, stride=2)(rng.standard_normal((2, 6, 12))).shape == (2, 6, 6)
    with pytest.raises(ConfigurationError):
        ResNet1DBlock(6, rng, stride=3)
    with pytest.raises(ConfigurationError):
        TCNBlock(4, 1, rng, dropout=2.0)


@pytest.mark.parametrize("unit", ["tcn", "1drn"])
@pytest.mark.parametrize("T", [1, 3, 8])
def test_stream_lengths(unit, T):
    rng = np.random.default_rng(T)
    vs = TemporalStream(video_stream_spec(unit, width=8, out_width=5), 6, rng)
    aus = TemporalStream(audio_stream_spec(unit, width=8, out_width=5), 7, rng)
    v = rng.standard_normal((2, T, 6))
    m = rng.standard_normal((2, 4 * T, 7))
    assert video_stream(v, vs).shape == (2, 4 * T, 5)
    assert audio_stream(m, aus, T).shape == (2, 4 * T, 5)
    with pytest.raises(AlignmentError):
        audio_stream(m[:, 1:], aus, T)


def test_table_specs():
    for unit in ("tcn", "1drn"):
        v = video_stream_spec(unit)
        assert v.upsample_factor == 4 and v.n_upsampling_stages() == 2
        assert audio_stream_spec(unit).upsample_factor == 1
        assert StreamSpec.from_dict(v.to_dict()) == v
    assert video_stream_spec("tcn").layers[1].filters == 520
    assert video_stream_spec("1drn").layers[1].filters == 1536
    with pytest.raises(ConfigurationError):
        video_stream_spec("lstm")


def test_bad_tables_rejected():
    bad = StreamSpec("tcn", "video", [LayerSpec("fc0", "fc", 4), LayerSpec("up", "tcn", 4, 3, 0.5)])
    with pytest.raises(ConfigurationError):
        TemporalStream(bad, 3, np.random.default_rng(0))
    mismatch = StreamSpec("tcn", "audio", [LayerSpec("t", "tcn", 4, 3, 1, 0, 1)])
    with pytest.raises(ConfigurationError):
        TemporalStream(mismatch, 3, np.random.default_rng(0))


@pytest.mark.parametrize("unit", ["tcn", "1drn"])
def test_length_masking_makes_batches_invariant(unit):
    rng = np.random.default_rng(0)
    stream = TemporalStream(video_stream_spec(unit, width=8, out_width=5), 6, rng)
    stream.eval()
    short = rng.standard_normal((1, 3, 6))
    padded = np.concatenate([short, rng.standard_normal((1, 4, 6))], axis=1)
    with no_grad():
        alone = stream(short).data
        batched = stream(padded, lengths=[3]).data
    np.testing.assert_allclose(batched[:, :12], alone, atol=1e-12)


def test_tcn_video_stream_is_causal():
    rng = np.random.default_rng(3)
    stream = TemporalStream(video_stream_spec("tcn", width=6, out_width=4), 5, rng)
    stream.eval()
    v = rng.standard_normal((1, 10, 5))
    w = v.copy()
    w[:, 6:] += 1.0
    with no_grad():
        a, b = stream(v).data, stream(w).data
    assert a[:, :24].tobytes() == b[:, :24].tobytes()
    assert not np.array_equal(a[:, 24:], b[:, 24:])
