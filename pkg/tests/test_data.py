import numpy as np
import pytest

from compcnn.config import ConfigError, RunConfig, load_config, parse_config
from compcnn.data import (ManifestError, assign_splits, bright_rows, load_manifest, read_pgm,
                          synth_generate, write_dataset, write_pgm)


class TestSynth:
    def test_noise_free_rows(self):
        ds = synth_generate(0, K=8, n_per_class=2, image_size=8, noise_sigma=0.0)
        for x, k, g in zip(ds.inputs, ds.age_class, ds.gender):
            # the gender ramp is +-0.1 at most, so brightness splits cleanly at 0.45
            lit = (x[0] > 0.45).all(axis=1)
            assert lit[:k].all() and not lit[k:].any()
            ramp = x[0, :, -1] - x[0, :, 0]
            assert np.all(ramp > 0) if g == 1 else np.all(ramp < 0)

    def test_bright_rows_monotone(self):
        for K, H in [(10, 16), (4, 8), (16, 16)]:
            rows = [bright_rows(k, K, H) for k in range(1, K + 1)]
            assert rows == sorted(set(rows)) and rows[-1] == H

    def test_same_seed_identical(self):
        a = synth_generate(3, 4, 5, 8, 0.1)
        b = synth_generate(3, 4, 5, 8, 0.1)
        assert a.inputs.tobytes() == b.inputs.tobytes()
        assert a.gender.tobytes() == b.gender.tobytes() and (a.split == b.split).all()
        c = synth_generate(4, 4, 5, 8, 0.1)
        assert a.inputs.tobytes() != c.inputs.tobytes()

    def test_class_brightness_increases(self):
        ds = synth_generate(1, 10, 50, 16, 0.1)
        means = [ds.inputs[ds.age_class == k].mean() for k in range(1, 11)]
        assert all(a < b for a, b in zip(means, means[1:]))
        assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1

    def test_rejects_unseparable(self):
        with pytest.raises(ValueError, match="cannot separate"):
            synth_generate(0, 20, 1, 8, 0.0)

    def test_splits_cover_every_class(self):
        ds = synth_generate(0, 5, 20, 8, 0.1)
        for name in ("train", "val", "test"):
            assert set(ds.subset(name).age_class) == set(range(1, 6))
        assert sum(len(ds.subset(n)) for n in ("train", "val", "test")) == len(ds)
        assert (ds.subset("train").age_class == 1).sum() == 14

    def test_split_determinism(self):
        labels = np.repeat([1, 2, 3], 10)
        assert (assign_splits(labels, 5) == assign_splits(labels, 5)).all()


class TestPgm:
    def test_roundtrip_within_quantization(self, tmp_path):
        img = np.random.default_rng(0).uniform(size=(5, 7))
        write_pgm(tmp_path / "a.pgm", img)
        back = read_pgm(tmp_path / "a.pgm")
        assert back.shape == (5, 7)
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12

    def test_ascii_variant(self, tmp_path):
        (tmp_path / "b.pgm").write_text("P2\n# comment\n2 2\n255\n0 255\n51 102\n")
        np.testing.assert_allclose(read_pgm(tmp_path / "b.pgm"), [[0, 1], [0.2, 0.4]])

    def test_truncated(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P5\n4 4\n255\n\x00\x01")
        with pytest.raises(ValueError, match="truncated"):
            read_pgm(tmp_path / "c.pgm")


def write_manifest(tmp_path, rows, images=True):
    (tmp_path / "img").mkdir(exist_ok=True)
    lines = ["id,path,age,gender"]
    for sid, age, g in rows:
        if images:
            write_pgm(tmp_path / "img" / f"{sid}.pgm", np.full((4, 4), 0.5))
        lines.append(f"{sid},img/{sid}.pgm,{age},{g}")
    (tmp_path / "m.csv").write_text("\n".join(lines) + "\n")
    return tmp_path / "m.csv"


class TestManifest:
    def test_two_rows_in_order(self, tmp_path):
        ds = load_manifest(write_manifest(tmp_path, [("a", 3, 0), ("b", 7, 1)]))
        assert ds.ids == ["a", "b"]
        assert ds.age_class.tolist() == [3, 7] and ds.gender.tolist() == [0, 1]
        assert ds.inputs.shape == (2, 1, 4, 4)

    def test_non_numeric_age(self, tmp_path):
        path = write_manifest(tmp_path, [("a", 3, 0), ("b", "abc", 1)])
        with pytest.raises(ManifestError, match="row 2.*'abc'"):
            load_manifest(path)

    def test_age_out_of_range(self, tmp_path):
        with pytest.raises(ManifestError, match="row 1"):
            load_manifest(write_manifest(tmp_path, [("a", 11, 0)]))

    def test_bad_gender(self, tmp_path):
        with pytest.raises(ManifestError, match="gender"):
            load_manifest(write_manifest(tmp_path, [("a", 2, "m")]))

    def test_missing_image(self, tmp_path):
        path = write_manifest(tmp_path, [("a", 2, 0)], images=False)
        with pytest.raises(ManifestError, match="not found"):
            load_manifest(path)

    def test_bad_header(self, tmp_path):
        (tmp_path / "m.csv").write_text("id,file,age\n")
        with pytest.raises(ManifestError, match="header"):
            load_manifest(tmp_path / "m.csv")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError, match="cannot open"):
            load_manifest(tmp_path / "nope.csv")

    def test_binned_ages(self, tmp_path):
        cfg = RunConfig(K=3, bin_width=5, age_min=20)
        ds = load_manifest(write_manifest(tmp_path, [("a", 20, 0), ("b", 24, 1), ("c", 34.5, 0)]), cfg)
        assert ds.age_class.tolist() == [1, 1, 3]
        assert ds.ages.tolist() == [22.0, 22.0, 32.0]

    def test_write_then_load(self, tmp_path):
        ds = synth_generate(2, 4, 3, 8, 0.1)
        back = load_manifest(write_dataset(ds, tmp_path), RunConfig(K=4, seed=2))
        assert back.ids == ds.ids
        assert (back.age_class == ds.age_class).all() and (back.gender == ds.gender).all()
        assert np.abs(back.inputs - ds.inputs).max() <= 0.5 / 255 + 1e-12
        assert (back.split == ds.split).all()


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert (cfg.K, cfg.margin, cfg.lam, cfg.tolerance, cfg.decoder) == (10, 1.0, 0.5, 5, "hits")
        assert cfg.class_ages == list(range(1, 11))

    def test_parse(self):
        cfg = parse_config("# run\nK = 5\nmultitask=true\nlam=0  # ablation\ndecoder=dex\n")
        assert (cfg.K, cfg.multitask, cfg.lam, cfg.decoder) == (5, True, 0.0, "dex")
        assert cfg.backbone_embedding_dim == 80

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="line 2.*'epoch'"):
            parse_config("K=5\nepoch=3\n")

    @pytest.mark.parametrize("text", ["K=abc", "K=1", "margin=0", "decoder=mean", "w_age=0\nw_gender=0",
                                      "multitask=maybe", "no equals sign"])
    def test_invalid(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_text_roundtrip(self, tmp_path):
        cfg = RunConfig(seed=4, K=6, noise_sigma=0.25, shared_backbone=True)
        (tmp_path / "c.cfg").write_text(cfg.to_text())
        assert load_config(tmp_path / "c.cfg") == cfg

    def test_age_to_class(self):
        cfg = RunConfig(K=4, bin_width=10, age_min=0)
        assert [cfg.age_to_class(a) for a in (0, 9.9, 10, 39)] == [1, 1, 2, 4]
        with pytest.raises(ValueError):
            cfg.age_to_class(40)
