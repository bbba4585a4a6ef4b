"""
End-to-end tests for the sequential matting engine
"""

import filecmp
import json
import os

import numpy as np
import pytest

from src.core import object_query
from src.core.config_manager import PipelineConfig
from src.core.errors import ArgumentError, UsageError
from src.core.image_io import Image, binarize, dilate, load_manifest, read_image, resample_bilinear
from src.core.logger import RunLogger
from src.core.pipeline import (BackboneStub, EngineState, MattingPipeline, backbone_stub, infer_frame,
                               init_weights, matting_decode, pad_to_stride, run_manifest, run_sequence, sweep_ks)
from src.core.weights import WeightStore


def _cfg(small_cfg, **changes):
    return PipelineConfig.from_dict({**small_cfg.to_dict(), **changes})


def _init_mask(clip):
    return binarize(clip.alphas[0], 0.5)


def _run(pipeline, frames, init_mask):
    state = EngineState()
    results = []
    for t, frame in enumerate(frames):
        result, state = infer_frame(pipeline, frame, state, init_mask if t == 0 else None)
        results.append(result)
    return results, state


class TestBackbone:

    def test_pyramid_strides(self, rng):
        backbone = BackboneStub(WeightStore(0), (4, 4, 8, 8))
        pyramid = backbone_stub(backbone, Image(rng.random((64, 64, 3))))
        assert [p.shape for p in pyramid] == [(32, 32, 4), (16, 16, 4), (8, 8, 8), (4, 4, 8)]

    def test_zero_image_gives_zero_features(self):
        backbone = BackboneStub(WeightStore(0), (4, 4, 8, 8))
        for level in backbone_stub(backbone, Image.full(32, 32, 0.0, channels=3)):
            assert not level.any()

    def test_same_seed_same_pyramid(self, rng):
        frame = Image(rng.random((32, 48, 3)))
        a = backbone_stub(BackboneStub(WeightStore(5), (4, 4, 8, 8)), frame)
        b = backbone_stub(BackboneStub(WeightStore(5), (4, 4, 8, 8)), frame)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_requires_rgb(self):
        with pytest.raises(ArgumentError):
            backbone_stub(BackboneStub(WeightStore(0), (4, 4, 8, 8)), Image.full(32, 32, 0.0))

    def test_pad_to_stride(self, rng):
        data = rng.random((40, 50, 3))
        padded, original = pad_to_stride(data)
        assert padded.shape == (48, 64, 3) and original == (40, 50)
        assert np.array_equal(padded[:40, :50], data)


class TestDecoder:

    def test_alpha_range_and_mask_definition(self, small_cfg, rng):
        pipeline = MattingPipeline(small_cfg)
        pyramid = backbone_stub(pipeline.backbone, Image(rng.random((32, 32, 3))))
        f_o = rng.standard_normal((2, 2, small_cfg.C)) * 10.0
        alpha, fg_mask, prob = matting_decode(pipeline.decoder, f_o, pyramid)
        assert alpha.size == (32, 32)
        assert alpha.data.min() >= 0.0 and alpha.data.max() <= 1.0
        assert np.array_equal(fg_mask.data, (prob.data >= 0.5).astype(float))

    def test_decoder_needs_stride_16_input(self, small_cfg, rng):
        pipeline = MattingPipeline(small_cfg)
        pyramid = backbone_stub(pipeline.backbone, Image(rng.random((32, 32, 3))))
        with pytest.raises(ArgumentError):
            pipeline.decoder(rng.standard_normal((3, 3, small_cfg.C)), pyramid)


class TestInferFrame:

    def test_first_frame_needs_initial_mask(self, small_cfg, synth_clip):
        with pytest.raises(UsageError):
            infer_frame(MattingPipeline(small_cfg), synth_clip.frames[0], EngineState())

    def test_full_initial_mask_unmasks_full_grid(self, small_cfg, synth_clip):
        result, _ = infer_frame(MattingPipeline(small_cfg), synth_clip.frames[0], EngineState(),
                                Image.full(64, 64, 1.0))
        assert result.diagnostics["guidance_support"] == result.diagnostics["guidance_total"] == 16

    def test_guidance_support_matches_recomputation(self, small_cfg, synth_clip):
        results, _ = _run(MattingPipeline(small_cfg), synth_clip.frames[:3], _init_mask(synth_clip))
        for prev, cur in zip(results, results[1:]):
            expected = dilate(binarize(resample_bilinear(prev.fg_mask, 4, 4), 0.5), small_cfg.ks).plane.sum()
            assert cur.diagnostics["guidance_support"] == int(expected)
        first = dilate(binarize(resample_bilinear(_init_mask(synth_clip), 4, 4), 0.5), small_cfg.ks)
        assert results[0].diagnostics["guidance_support"] == int(first.plane.sum())

    def test_outputs_are_valid(self, small_cfg, synth_clip):
        results, state = _run(MattingPipeline(small_cfg), synth_clip.frames[:4], _init_mask(synth_clip))
        for r in results:
            assert r.alpha.data.min() >= 0.0 and r.alpha.data.max() <= 1.0
            assert np.all((r.fg_mask.data == 0.0) | (r.fg_mask.data == 1.0))
        assert state.bank.stored_frames == (1, 4)
        assert len({r.diagnostics["memory_tokens"] for r in results}) == 1

    def test_deterministic(self, small_cfg, synth_clip):
        a, _ = _run(MattingPipeline(small_cfg), synth_clip.frames[:3], _init_mask(synth_clip))
        b, _ = _run(MattingPipeline(small_cfg), synth_clip.frames[:3], _init_mask(synth_clip))
        for x, y in zip(a, b):
            assert np.array_equal(x.alpha.data, y.alpha.data)
            assert np.array_equal(x.mask_prob.data, y.mask_prob.data)

    def test_constant_input_stability(self, small_cfg, synth_clip):
        frames = [synth_clip.frames[0]] * 10
        results, _ = _run(MattingPipeline(small_cfg), frames, _init_mask(synth_clip))

        def same(x, y):
            return np.array_equal(x.mask_prob.data, y.mask_prob.data) and np.array_equal(x.alpha.data, y.alpha.data)

        settled = next((k for k in range(len(results) - 1) if same(results[k], results[k + 1])), None)
        assert settled is not None, "outputs never repeated within ten identical frames"
        for later in results[settled + 1:]:
            assert same(later, results[settled])

    def test_set_prediction_heads_are_never_called(self, small_cfg, synth_clip, monkeypatch):
        expected, _ = _run(MattingPipeline(small_cfg), synth_clip.frames[:2], _init_mask(synth_clip))

        def boom(*args, **kwargs):
            raise AssertionError("set-prediction head invoked during inference")

        monkeypatch.setattr(object_query.ObjectQueryGenerator, "predict_instance_masks", boom)
        monkeypatch.setattr(object_query, "predict_instance_masks", boom)
        monkeypatch.setattr(object_query, "hungarian_match", boom)
        results, _ = _run(MattingPipeline(small_cfg), synth_clip.frames[:2], _init_mask(synth_clip))
        assert np.array_equal(results[1].alpha.data, expected[1].alpha.data)

    def test_padding_is_logged_and_cropped(self, small_cfg, rng):
        run_logger = RunLogger("pad")
        pipeline = MattingPipeline(small_cfg, run_logger=run_logger)
        frame = Image(rng.random((40, 56, 3)))
        result, _ = infer_frame(pipeline, frame, EngineState(), Image.full(40, 56, 1.0))
        assert result.alpha.size == (40, 56)
        assert result.diagnostics["padded"] is True
        assert run_logger.activities("PADDED")[0]["padded"] == [48, 64]

    def test_initial_mask_size_must_match(self, small_cfg, synth_clip):
        with pytest.raises(ArgumentError):
            infer_frame(MattingPipeline(small_cfg), synth_clip.frames[0], EngineState(), Image.full(32, 32, 1.0))


class TestAblations:

    def test_without_guidance_attention_is_unmasked(self, small_cfg, synth_clip):
        results, _ = _run(MattingPipeline(_cfg(small_cfg, use_guidance=False)), synth_clip.frames[:2],
                          _init_mask(synth_clip))
        assert all(r.diagnostics["guidance_support"] == 16 for r in results)

    def test_without_queries(self, small_cfg, synth_clip):
        results, _ = _run(MattingPipeline(_cfg(small_cfg, use_oqg=False)), synth_clip.frames[:2],
                          _init_mask(synth_clip))
        assert results[1].diagnostics["attention"] is not None

    def test_without_correction(self, small_cfg, synth_clip):
        results, _ = _run(MattingPipeline(_cfg(small_cfg, use_ogcr=False)), synth_clip.frames[:2],
                          _init_mask(synth_clip))
        assert results[1].diagnostics["attention"] is None
        assert results[1].alpha.size == (64, 64)


class TestRunSequence:

    def test_writes_every_frame(self, small_cfg, clip_dir, tmp_path):
        manifest = load_manifest(clip_dir)
        out = tmp_path / "run"
        result = run_sequence(manifest, small_cfg, str(out), read_image(manifest.paths("masks")[0]))
        assert len(result.results) == 8
        assert sorted(p for p in os.listdir(out) if p.startswith("alpha_")) == \
            [f"alpha_{i:04d}.pgm" for i in range(1, 9)]
        diagnostics = json.loads((out / "diagnostics.json").read_text())
        assert len(diagnostics["frames"]) == 8
        assert "output_dir" not in diagnostics["config"]
        assert result.report is not None and (out / "metrics.json").exists()

    def test_byte_identical_reruns(self, small_cfg, clip_dir, tmp_path):
        manifest = load_manifest(clip_dir)
        mask = read_image(manifest.paths("masks")[0])
        run_sequence(manifest, small_cfg, str(tmp_path / "a"), mask)
        run_sequence(manifest, small_cfg, str(tmp_path / "b"), mask)
        names = sorted(os.listdir(tmp_path / "a"))
        assert names == sorted(os.listdir(tmp_path / "b"))
        match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
        assert mismatch == [] and errors == []

    def test_missing_initial_mask(self, small_cfg, clip_dir, tmp_path):
        with pytest.raises(UsageError):
            run_sequence(load_manifest(clip_dir), small_cfg, str(tmp_path / "x"))

    def test_run_manifest_defaults_to_first_mask(self, small_cfg, clip_dir, tmp_path):
        result = run_manifest(clip_dir, small_cfg, str(tmp_path / "run"))
        assert len(result.output_manifest.alphas) == 8

    def test_attention_maps(self, small_cfg, clip_dir, tmp_path):
        cfg = _cfg(small_cfg, save_attention=True)
        run_manifest(clip_dir, cfg, str(tmp_path / "run"))
        maps = sorted(os.listdir(tmp_path / "run" / "attention"))
        assert len(maps) == 8 * cfg.N
        assert maps[0] == "frame_0001_q01.pgm"
        assert read_image(str(tmp_path / "run" / "attention" / maps[0])).data.max() == 1.0

    def test_saved_weights_reproduce_outputs(self, small_cfg, clip_dir, tmp_path):
        weights = str(tmp_path / "w.bin")
        init_weights(small_cfg, weights)
        a = run_manifest(clip_dir, small_cfg, str(tmp_path / "a"))
        b = run_manifest(clip_dir, small_cfg, str(tmp_path / "b"), weights_path=weights)
        assert np.array_equal(a.results[-1].alpha.data, b.results[-1].alpha.data)

    def test_sweep_ks(self, small_cfg, clip_dir, tmp_path):
        summary = sweep_ks(clip_dir, small_cfg, [3, 5], str(tmp_path / "sweep"))
        assert sorted(summary["ks"]) == ["3", "5"]
        assert summary["ks"]["3"]["metrics"]["mad"] >= 0.0
        assert (tmp_path / "sweep" / "sweep.json").exists()
