import csv

import numpy as np
import pytest
import torch

from vgsep.audio import Waveform, save_wav
from vgsep.cli import main as cli_main
from vgsep.config import TrainConfig, parse_config_file, train_config_from
from vgsep.data import (
    SyntheticDatasetSpec,
    generate_synthetic_dataset,
    load_clip,
    load_dataset,
    mixture_pairs,
    synthesize_clip,
)
from vgsep.generative import SamplerConfig
from vgsep.inference import evaluate, separate, sweep_steps
from vgsep.training import (
    CHECKPOINT_FORMAT_VERSION,
    build_model,
    load_checkpoint,
    save_checkpoint,
    train,
)
from vgsep.unet import UNetConfig
from vgsep.visual import CategoryFrameEncoder

TINY_TRAIN = dict(batch_size=2, train_steps=2, base_channels=16, geometry="desk")


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    generate_synthetic_dataset(SyntheticDatasetSpec(clips_per_category=2, seed=3), root)
    return root


@pytest.fixture(scope="module")
def tiny_fm_checkpoint(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("fm_run")
    config = TrainConfig(data_root=str(dataset), out_dir=str(out), variant="fm", seed=1, **TINY_TRAIN)
    return train(config)


class TestSyntheticData:
    def test_regeneration_is_byte_identical(self, tmp_path):
        spec = SyntheticDatasetSpec(clips_per_category=2, seed=11)
        a, b = tmp_path / "a", tmp_path / "b"
        generate_synthetic_dataset(spec, a)
        generate_synthetic_dataset(spec, b)
        for wav_a in sorted(a.rglob("*.wav")):
            wav_b = b / wav_a.relative_to(a)
            assert wav_a.read_bytes() == wav_b.read_bytes()

    def test_category_peak_inside_declared_band(self):
        # FFT peak-pick oracle on the raw synthesized signal
        spec = SyntheticDatasetSpec(seed=4)
        for cat in range(4):
            clip = synthesize_clip(spec, cat, 0)
            mags = np.abs(np.fft.rfft(clip * np.hanning(len(clip))))
            freqs = np.fft.rfftfreq(len(clip), 1.0 / spec.sample_rate)
            peak = freqs[np.argmax(mags)]
            lo, hi = spec.bands[cat]
            assert lo <= peak <= hi, f"category {cat} peak {peak} outside ({lo}, {hi})"

    def test_single_category_intra_class_configuration(self, tmp_path):
        spec = SyntheticDatasetSpec(n_categories=1, clips_per_category=3, seed=5)
        generate_synthetic_dataset(spec, tmp_path)
        records = load_dataset(tmp_path)
        assert {r.category for r in records} == {0}
        pairs = mixture_pairs(records, 2, seed=0)
        assert all(a.category == b.category == 0 for a, b in pairs)

    def test_overlapping_bands_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            SyntheticDatasetSpec(n_categories=2, bands=((100.0, 500.0), (400.0, 900.0)))

    def test_split_assignment(self, dataset):
        train_recs = load_dataset(dataset, split="train")
        test_recs = load_dataset(dataset, split="test")
        assert train_recs and test_recs
        assert {r.name for r in train_recs}.isdisjoint({r.name for r in test_recs})

    def test_clip_loading_fixed_length(self, dataset):
        rec = load_dataset(dataset)[0]
        wave = load_clip(rec, 16384, 11025)
        assert len(wave) == 16384


class TestCheckpointing:
    def test_save_load_bitwise_identical_forward(self, tmp_path):
        config = TrainConfig(data_root="unused", out_dir=str(tmp_path), variant="fm", **TINY_TRAIN)
        model = build_model("fm", config.unet, seed=0)
        encoder = CategoryFrameEncoder(4, config.unet.condition_dim, seed=0)
        path = save_checkpoint(tmp_path / "ck.pt", model, config, encoder, step=0)
        loaded = load_checkpoint(path)
        x = torch.rand(1, 64, 64)
        v = torch.randn(1, config.unet.condition_dim)
        t = torch.rand(1)
        with torch.no_grad():
            a = model(x, x, v, t)
            b = loaded.model(x, x, v, t)
        assert torch.equal(a, b)

    def test_one_step_run_loadable(self, tiny_fm_checkpoint):
        ckpt = load_checkpoint(tiny_fm_checkpoint)
        assert ckpt.variant == "fm"
        assert ckpt.step == 2
        assert ckpt.schedule is None  # fm tag: no noise schedule stored

    def test_version_mismatch_rejected(self, tmp_path, tiny_fm_checkpoint):
        payload = torch.load(tiny_fm_checkpoint, map_location="cpu", weights_only=False)
        payload["format_version"] = CHECKPOINT_FORMAT_VERSION + 1
        bad = tmp_path / "bad.pt"
        torch.save(payload, bad)
        with pytest.raises(ValueError, match="format version"):
            load_checkpoint(bad)

    def test_ddpm_checkpoint_stores_schedule(self, tmp_path, dataset):
        config = TrainConfig(
            data_root=str(dataset), out_dir=str(tmp_path / "run"), variant="ddpm",
            seed=2, **TINY_TRAIN,
        )
        ckpt = load_checkpoint(train(config))
        assert ckpt.schedule is not None
        assert ckpt.schedule.total_steps == config.total_steps

    def test_resume_continues_loss_curve_exactly(self, tmp_path, dataset):
        base = dict(data_root=str(dataset), variant="fm", seed=9, **TINY_TRAIN)
        base["train_steps"] = 2

        out_a = tmp_path / "a"
        ck_a = train(TrainConfig(out_dir=str(out_a), **base))
        resumed = train(
            TrainConfig(out_dir=str(out_a), **{**base, "train_steps": 1}), resume_from=ck_a
        )
        out_b = tmp_path / "b"
        straight = train(TrainConfig(out_dir=str(out_b), **{**base, "train_steps": 3}))

        def losses(run_dir):
            with open(run_dir / "loss_log.csv") as fh:
                return [(int(r["step"]), float(r["loss"])) for r in csv.DictReader(fh)]

        assert losses(out_a) == losses(out_b)
        ck_resumed = load_checkpoint(resumed)
        ck_straight = load_checkpoint(straight)
        for (ka, pa), (kb, pb) in zip(
            ck_resumed.model.state_dict().items(), ck_straight.model.state_dict().items()
        ):
            assert ka == kb and torch.equal(pa, pb)


class TestTrainingInvariants:
    def test_logged_loss_is_sum_of_both_source_losses(self, tmp_path, dataset):
        # replay the first step's RNG stream and recompute each source's loss
        # independently; the logged value must be their sum
        from vgsep.generative import TrainingBatch, fm_loss
        from vgsep.training import _PairGrids, build_model
        from vgsep.data import load_clip

        config = TrainConfig(
            data_root=str(dataset), out_dir=str(tmp_path / "run"), variant="fm",
            seed=21, batch_size=2, train_steps=1, base_channels=16,
        )
        train(config)
        with open(tmp_path / "run" / "loss_log.csv") as fh:
            logged = float(next(csv.DictReader(fh))["loss"])

        spectro = config.spectrogram
        records = load_dataset(config.data_root, split="train")
        waves = [load_clip(r, spectro.segment_length, spectro.sample_rate) for r in records]
        categories = [r.category for r in records]
        n_cat = max(categories) + 1
        pair_indices = [
            (i, j) for i in range(len(records)) for j in range(i + 1, len(records))
            if categories[i] != categories[j]
        ]
        grids = _PairGrids(waves, spectro)
        model = build_model(config.variant, config.unet, config.total_steps, config.max_frames, config.seed)
        encoder = CategoryFrameEncoder(n_cat, config.unet.condition_dim, seed=config.seed)
        cat_emb = torch.from_numpy(encoder.encode(list(range(n_cat)))).unsqueeze(1)
        generator = torch.Generator().manual_seed(config.seed)

        idx = torch.randint(0, len(pair_indices), (config.batch_size,), generator=generator)
        chosen = [pair_indices[i] for i in idx.tolist()]
        triples = [grids.get(i, j) for i, j in chosen]
        x_mix = torch.stack([t[0] for t in triples])
        total = 0.0
        for src, cats in (
            (torch.stack([t[1] for t in triples]), [categories[i] for i, _ in chosen]),
            (torch.stack([t[2] for t in triples]), [categories[j] for _, j in chosen]),
        ):
            with torch.no_grad():
                v = model.condition(cat_emb[cats])
                batch = TrainingBatch(x_target=src, x_mix=x_mix, v=v)
                total += float(fm_loss(model, batch, generator, norm=config.loss))
        assert abs(total - logged) < 1e-5

    def test_loss_decreases_over_training(self, tmp_path, dataset):
        config = TrainConfig(
            data_root=str(dataset), out_dir=str(tmp_path / "run"), variant="fm",
            seed=2, batch_size=2, train_steps=60, base_channels=16, lr=3e-4,
        )
        train(config)
        with open(tmp_path / "run" / "loss_log.csv") as fh:
            losses = [float(r["loss"]) for r in csv.DictReader(fh)]
        assert np.mean(losses[-5:]) < np.mean(losses[:5])


class TestSeparateAndEvaluate:
    def test_silent_mixture_guided_output_near_silent(self, tiny_fm_checkpoint):
        ckpt = load_checkpoint(tiny_fm_checkpoint)
        silent = Waveform(np.zeros(16384))
        result = separate(ckpt, silent, 0, SamplerConfig(variant="fm", steps=2, seed=0))
        rms = float(np.sqrt(np.mean(result.waveform.samples**2)))
        assert rms < 1e-3

    def test_same_seed_bit_identical_output(self, tiny_fm_checkpoint, dataset, tmp_path):
        ckpt = load_checkpoint(tiny_fm_checkpoint)
        rec = load_dataset(dataset)[0]
        wave = load_clip(rec, 16384, 11025)
        cfg = SamplerConfig(variant="fm", steps=2, seed=123)
        a = separate(ckpt, wave, rec.category, cfg)
        b = separate(ckpt, wave, rec.category, cfg)
        np.testing.assert_array_equal(a.waveform.samples, b.waveform.samples)
        save_wav(tmp_path / "a.wav", a.waveform)
        save_wav(tmp_path / "b.wav", b.waveform)
        assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()

    def test_variant_mismatch_rejected(self, tiny_fm_checkpoint):
        ckpt = load_checkpoint(tiny_fm_checkpoint)
        with pytest.raises(ValueError, match="variant"):
            separate(ckpt, Waveform(np.zeros(16384)), 0, SamplerConfig(variant="ddpm"))

    def test_condition_dim_mismatch_rejected(self, tiny_fm_checkpoint):
        ckpt = load_checkpoint(tiny_fm_checkpoint)
        with pytest.raises(ValueError, match="dim"):
            separate(ckpt, Waveform(np.zeros(16384)), np.zeros(7, dtype=np.float32),
                     SamplerConfig(variant="fm", steps=1))

    def test_embedding_file_condition_hook(self, tiny_fm_checkpoint, tmp_path):
        from vgsep.visual import write_embedding_file

        ckpt = load_checkpoint(tiny_fm_checkpoint)
        dim = ckpt.unet_config.condition_dim
        emb = np.random.default_rng(0).standard_normal(dim).astype(np.float32)
        path = tmp_path / "cond.emb"
        write_embedding_file(path, emb, "external")
        result = separate(
            ckpt, Waveform(np.zeros(16384)), path, SamplerConfig(variant="fm", steps=1, seed=0)
        )
        assert result.waveform is not None

    def test_evaluate_includes_mixture_baseline(self, tiny_fm_checkpoint, dataset):
        report = evaluate(
            tiny_fm_checkpoint, dataset, split="train",
            sampler=SamplerConfig(variant="fm", steps=1), n_mixtures=1, seed=0,
        )
        methods = {r.method for r in report.rows}
        assert methods == {"model", "mixture"}
        assert not report.errors

    def test_evaluate_identity_sanity_capped_metrics(self, dataset):
        # feeding references as estimates yields capped +100 dB rows
        from vgsep.evaluation import bss_eval

        recs = load_dataset(dataset, split="train")
        pairs = mixture_pairs(recs, 1, seed=1)
        a, b = pairs[0]
        wa = load_clip(a, 16384, 11025)
        wb = load_clip(b, 16384, 11025)
        refs = [np.asarray(wa.samples), np.asarray(wb.samples)]
        assert bss_eval(refs[0], refs, 0) == (100.0, 100.0, 100.0)

    def test_sweep_rows(self, tiny_fm_checkpoint, dataset):
        rows = sweep_steps(
            tiny_fm_checkpoint, dataset, split="train", steps_grid=(1, 2),
            n_mixtures=1, seed=0,
        )
        assert [r["steps"] for r in rows] == [1, 2]
        assert all(r["variant"] == "fm" for r in rows)
        assert all(np.isfinite(r["sdr"]) for r in rows)


class TestConfigFile:
    def test_parse_and_types(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text(
            "# comment\nvariant = fm\nlr = 2e-4\ntrain_steps = 7\ndata_root = /tmp/x\n"
        )
        values = parse_config_file(cfg_file)
        config = train_config_from(values)
        assert config.variant == "fm"
        assert config.lr == 2e-4
        assert config.train_steps == 7

    def test_cli_overrides_win(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("variant = fm\nlr = 2e-4\n")
        config = train_config_from(parse_config_file(cfg_file), {"lr": 9e-4, "variant": None})
        assert config.lr == 9e-4
        assert config.variant == "fm"  # None override falls back to file value

    def test_unknown_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("not_a_key = 1\n")
        with pytest.raises(ValueError, match="unknown config key"):
            train_config_from(parse_config_file(cfg_file))

    def test_bad_line_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("just some words\n")
        with pytest.raises(ValueError, match="key = value"):
            parse_config_file(cfg_file)


class TestCli:
    def test_full_command_cycle(self, tmp_path, capsys):
        data = tmp_path / "data"
        assert cli_main([
            "synth-data", "--out", str(data), "--clips-per-category", "2", "--seed", "2",
        ]) == 0

        run = tmp_path / "run"
        assert cli_main([
            "train", "--data", str(data), "--out", str(run), "--variant", "fm",
            "--train-steps", "2", "--batch-size", "2", "--base-channels", "16", "--seed", "0",
        ]) == 0
        ckpt = run / "checkpoint_final.pt"
        assert ckpt.exists()

        mixture = tmp_path / "mix.wav"
        rng = np.random.default_rng(0)
        save_wav(mixture, Waveform(0.3 * rng.standard_normal(16384).clip(-1, 1)))
        out_wav = tmp_path / "sep.wav"
        assert cli_main([
            "separate", "--checkpoint", str(ckpt), "--mixture", str(mixture),
            "--category", "0", "--out", str(out_wav), "--steps", "1",
            "--dump-spectrogram", str(tmp_path / "grid.bin"),
        ]) == 0
        assert out_wav.exists()
        assert (tmp_path / "grid.bin").exists() and (tmp_path / "grid.bin.hdr").exists()

        report_csv = tmp_path / "report.csv"
        assert cli_main([
            "evaluate", "--checkpoint", str(ckpt), "--data", str(data), "--split", "train",
            "--mixtures", "1", "--steps", "1", "--out", str(report_csv),
        ]) == 0
        assert report_csv.exists()

        sweep_csv = tmp_path / "sweep.csv"
        assert cli_main([
            "sweep-steps", "--checkpoint", str(ckpt), "--data", str(data), "--split", "train",
            "--mixtures", "1", "--steps-grid", "1,2", "--out", str(sweep_csv),
        ]) == 0
        text = sweep_csv.read_text()
        assert text.startswith("variant,steps,sdr,sir,sar")

    def test_variant_mismatch_exits(self, tiny_fm_checkpoint, tmp_path):
        mixture = tmp_path / "m.wav"
        save_wav(mixture, Waveform(np.zeros(16384)))
        with pytest.raises(SystemExit):
            cli_main([
                "separate", "--checkpoint", str(tiny_fm_checkpoint), "--mixture", str(mixture),
                "--category", "0", "--out", str(tmp_path / "o.wav"), "--variant", "ddpm",
            ])


class TestEstimator:
    def test_sklearn_protocol(self):
        from sklearn.base import clone

        from vgsep.estimator import GenerativeSeparator

        est = GenerativeSeparator(variant="fm", train_steps=3, base_channels=16)
        params = est.get_params()
        assert params["variant"] == "fm"
        est2 = clone(est)
        assert est2.get_params() == params
        est2.set_params(train_steps=5)
        assert est2.train_steps == 5

    def test_not_fitted_error(self):
        from sklearn.exceptions import NotFittedError

        from vgsep.estimator import GenerativeSeparator

        with pytest.raises(NotFittedError):
            GenerativeSeparator().separate(Waveform(np.zeros(16384)), 0)

    def test_fit_predict_cycle(self, dataset, tmp_path):
        from vgsep.estimator import GenerativeSeparator
        from vgsep.inference import SeparationResult

        est = GenerativeSeparator(
            variant="fm", train_steps=2, batch_size=2, base_channels=16,
            steps=1, out_dir=str(tmp_path / "fit"),
        )
        est.fit(str(dataset))
        rec = load_dataset(dataset)[0]
        wave = load_clip(rec, 16384, 11025)
        result = est.predict((wave, rec.category))
        assert isinstance(result, SeparationResult)
        assert result.predicted_magnitude.grid.shape == (64, 64)

    def test_load_existing_checkpoint(self, tiny_fm_checkpoint):
        from vgsep.estimator import GenerativeSeparator

        est = GenerativeSeparator().load(tiny_fm_checkpoint)
        assert est.variant == "fm"
        result = est.separate(Waveform(np.zeros(16384)), 0)
        assert len(result.waveform) > 0
