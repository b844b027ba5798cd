import numpy as np
import pytest

from aemsr.autograd import Tensor, check_gradients, no_grad, ops
from aemsr.autograd.nn import Conv3d
from aemsr.errors import ConfigurationError, FormatError
from aemsr.frontend import (FRAME_SIZE, P3DBlock, P3DConfig, VideoClip, VisualFrontend, WordClassifier,
                            factored_parameter_count, frontend_forward, p3d_block, word_classify)

from gradcases import BLOCKS


def test_stem_shape_before_pooling():
    cfg = P3DConfig.full()
    fe = VisualFrontend(cfg, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).random((1, 1, 2, FRAME_SIZE, FRAME_SIZE)))
    with no_grad():
        out = fe.stem(x)
    assert out.shape == (1, 64, 2, 56, 56)


def test_full_preset_layout():
    cfg = P3DConfig.full()
    assert sum(cfg.stage_blocks) * 3 + 2 == 50  # three convs per bottleneck, stem, classifier
    assert cfg.out_width == 512
    assert cfg.block_modes()[:4] == ["A", "B", "C", "A"]


def test_factored_parameter_count_matches_modules():
    rng = np.random.default_rng(0)
    for c in (4, 8, 16):
        spatial = Conv3d(c, c, (1, 3, 3), rng, bias=False)
        temporal = Conv3d(c, c, (3, 1, 1), rng, bias=False)
        full = Conv3d(c, c, (3, 3, 3), rng, bias=False)
        factored, dense = factored_parameter_count(c)
        assert factored == spatial.W.size + temporal.W.size == 12 * c * c
        assert dense == full.W.size == 27 * c * c


@pytest.mark.parametrize("mode", ["A", "B", "C"])
def test_block_shapes_and_zero_residual_identity(mode):
    rng = np.random.default_rng(0)
    block = P3DBlock(8, 8, mode, rng, zero_init_residual=True)
    x = np.abs(rng.standard_normal((2, 8, 3, 6, 6)))
    out = block(x)
    assert out.shape == x.shape
    # the last BN scale is zero, so the block reduces to relu(x) = x
    np.testing.assert_array_equal(out.data, x)


def test_block_downsamples_with_projection():
    rng = np.random.default_rng(0)
    block = P3DBlock(4, 8, "B", rng, spatial_stride=2)
    assert block(rng.standard_normal((1, 4, 3, 8, 8))).shape == (1, 8, 3, 4, 4)
    with pytest.raises(ConfigurationError):
        P3DBlock(4, 8, "A", rng, projection=False)
    with pytest.raises(ConfigurationError):
        P3DBlock(4, 4, "D", rng)
    with pytest.raises(ConfigurationError):
        block(rng.standard_normal((1, 3, 3, 8, 8)))


def test_modes_differ_and_rewiring_restores():
    rng = np.random.default_rng(2)
    block = P3DBlock(4, 4, "A", rng)
    for p in block.parameters():
        p.data += 0.1 * rng.standard_normal(p.shape)
    x = rng.standard_normal((1, 4, 4, 5, 5))
    outs = {m: p3d_block(x, block, m).data for m in "ABC"}
    assert block.mode == "A"
    assert not np.allclose(outs["A"], outs["B"]) and not np.allclose(outs["B"], outs["C"])
    np.testing.assert_array_equal(outs["A"], p3d_block(x, block).data)


@pytest.mark.parametrize("name", ["p3d_A", "p3d_B", "p3d_C"])
@pytest.mark.parametrize("seed", [0, 1])
def test_block_gradients(name, seed):
    fn, tensors = BLOCKS[name](seed)
    errs = check_gradients(fn, tensors, max_entries=4, rng=np.random.default_rng(seed))
    assert max(errs.values()) < 1e-4, errs


def test_frontend_preserves_time_and_batch_invariance():
    rng = np.random.default_rng(0)
    fe = VisualFrontend(P3DConfig.desk(), rng)
    fe.eval()
    clips = rng.random((2, 5, FRAME_SIZE, FRAME_SIZE))
    with no_grad():
        both = fe(clips).data
        single = fe(clips[1]).data
    assert both.shape == (2, 5, fe.out_width)
    np.testing.assert_allclose(single, both[1], atol=1e-12)
    clip = VideoClip(clips[0])
    with no_grad():
        np.testing.assert_array_equal(frontend_forward(clip, fe).data, fe(clips[0]).data)


def test_word_classifier_logits():
    rng = np.random.default_rng(0)
    model = WordClassifier(VisualFrontend(P3DConfig.desk(), rng), 10, rng)
    out = word_classify(rng.random((3, 4, FRAME_SIZE, FRAME_SIZE)), model)
    assert out.shape == (3, 10)
    with pytest.raises(ConfigurationError):
        WordClassifier(model.frontend, 1, rng)


def test_clip_validation():
    with pytest.raises(FormatError):
        VideoClip(np.zeros((3, 64, 64)))
    with pytest.raises(FormatError):
        VideoClip(np.full((3, FRAME_SIZE, FRAME_SIZE), 2.0))
    with pytest.raises(FormatError):
        VisualFrontend(P3DConfig.desk(), np.random.default_rng(0))(np.zeros((1, 2, 50, 50)))
    with pytest.raises(ConfigurationError):
        P3DConfig(cycle=("A", "A", "A"))
