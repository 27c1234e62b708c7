import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from radial_canon import train as tr
from radial_canon.autodiff import Tensor
from radial_canon.beams import multiplicity_grid
from radial_canon.data import Dataset, SyntheticSpec, gen_lit_sphere
from radial_canon.errors import ConfigError, EmptyDataset, NonFiniteLoss, ShapeMismatch
from radial_canon.imageops import optimal_padding, pad, rotate
from radial_canon.net import ModelConfig, init
from radial_canon import rbt

from conftest import blob_image

TINY = tr.TrainConfig(batch_size=4, num_beams=8, latent=8, learning_rate=1e-3, iterations=3, seed=0)


def spheres(count=8, size=32, seed=0):
    return gen_lit_sphere(SyntheticSpec(image_size=size, count=count, seed=seed))


def small_regressor(size=33, beams=8, seed=0):
    length = tr.preset_length(size, "B", beams, 1)
    cfg = ModelConfig(num_beams=beams, length=length, thickness=1, channels=1, latent=8)
    return tr.Regressor(init(cfg, seed), size)


class TestAugment:
    def test_finite_support(self, rng):
        img = np.zeros((5, 5, 1))
        for _ in range(200):
            out, theta, k = tr.augment(img, "finite", 4, rng)
            assert theta in (0.0, 90.0, 180.0, 270.0) and theta == k * 90.0
            assert out.data.shape == img.shape

    def test_continuous_range(self, rng):
        for _ in range(200):
            _, theta, k = tr.augment(np.zeros((3, 3)), "continuous", 4, rng)
            assert 0.0 <= theta < 360.0 and k is None

    def test_reproducible(self):
        draw = lambda: [tr.augment(np.zeros((3, 3)), "continuous", 8, np.random.default_rng(5))[1] for _ in range(3)]
        assert draw() == draw()

    @pytest.mark.parametrize("regime,cells", [("finite", 16), ("continuous", 36)])
    def test_uniformity_chi_square(self, regime, cells):
        rng = np.random.default_rng(99)
        img = np.zeros((1, 1, 1))
        thetas = np.array([tr.augment(img, regime, 16, rng)[1] for _ in range(100_000)])
        counts = np.bincount((thetas * cells / 360.0).astype(int), minlength=cells)
        assert len(counts) == cells
        chi2 = ((counts - len(thetas) / cells) ** 2 / (len(thetas) / cells)).sum()
        assert chi2 < stats.chi2.ppf(0.99, cells - 1)

    def test_unknown_regime(self, rng):
        with pytest.raises(ValueError):
            tr.augment(np.zeros((3, 3)), "spiral", 4, rng)


def reference_adam(p, grads, lr, b1, b2, eps):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return p


class TestAdam:
    def test_zero_gradient(self):
        p = {"w": np.array([1.0, -2.0])}
        new, _ = tr.adam_step(p, {"w": np.zeros(2)}, None, 1)
        assert np.array_equal(new["w"], p["w"])

    def test_first_step_is_lr_times_sign(self):
        p = {"w": np.zeros(3)}
        new, _ = tr.adam_step(p, {"w": np.array([0.5, -3.0, 7.0])}, None, 1, lr=1e-3)
        assert np.allclose(new["w"], -1e-3 * np.array([1, -1, 1]), rtol=1e-6)

    def test_matches_scalar_reference(self):
        grads = [0.3, -1.2, 0.05, 2.0, 0.0]
        p, state = {"w": np.array([0.7])}, None
        for t, g in enumerate(grads, 1):
            p, state = tr.adam_step(p, {"w": np.array([g])}, state, t, 0.01, 0.9, 0.999)
        assert p["w"][0] == pytest.approx(reference_adam(0.7, grads, 0.01, 0.9, 0.999, 1e-8), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            tr.adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, None, 1)

    def test_step_counter(self):
        with pytest.raises(ValueError):
            tr.adam_step({"w": np.zeros(2)}, {"w": np.zeros(2)}, None, 0)


class TestConfig:
    def test_defaults(self):
        cfg = tr.TrainConfig()
        assert (cfg.batch_size, cfg.num_beams, cfg.thickness, cfg.learning_rate) == (128, 32, 1, 1e-4)
        assert (cfg.beta1, cfg.beta2, cfg.split_fraction, cfg.latent) == (0.9, 0.999, 0.8, 128)

    def test_text_round_trip(self, tmp_path):
        cfg = replace(TINY, loss_mode="sum", rotation_regime="finite", learning_rate=3e-4)
        tr.write_config(tmp_path / "c.cfg", cfg)
        assert tr.read_config(tmp_path / "c.cfg") == cfg

    def test_comments_and_unknown_keys(self):
        assert tr.config_from_text("# hi\nseed = 4  # four\n").seed == 4
        with pytest.raises(ConfigError):
            tr.config_from_text("sede = 4")
        with pytest.raises(ConfigError):
            tr.config_from_text("seed = four")

    def test_prior_needs_finite_group(self):
        with pytest.raises(ConfigError):
            tr.TrainConfig(loss_mode="sum", rotation_regime="continuous")

    def test_presets(self):
        assert tr.preset_length(64, "A") == 32 - 14
        assert tr.preset_length(64, "B") == 32
        c = tr.preset_length(64, "C")
        assert 32 < c <= 32 + 14


class TestTrain:
    def test_one_sample_one_step(self):
        res = tr.train(replace(TINY, iterations=1, batch_size=1, split_fraction=1.0), spheres(1))
        assert len(res.curve) == 1 and math.isfinite(res.curve[0])
        assert all(np.all(np.isfinite(p.grad)) for p in res.model.parameters())

    @pytest.mark.parametrize("mode", ["circle_only", "sum", "dynamic"])
    def test_loss_modes_run(self, mode):
        cfg = replace(TINY, loss_mode=mode, rotation_regime="finite")
        res = tr.train(cfg, spheres())
        assert len(res.curve) == 3 and all(math.isfinite(v) for v in res.curve)

    def test_deterministic(self):
        a = tr.train(TINY, spheres()).curve
        b = tr.train(TINY, spheres()).curve
        assert a == b

    def test_split(self):
        res = tr.train(TINY, spheres(10))
        assert len(res.train_idx) == 8 and len(res.test_idx) == 2
        assert not set(res.train_idx) & set(res.test_idx)

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            tr.train(TINY, Dataset(np.zeros((0, 32, 32, 1))))

    def test_non_finite_loss(self, monkeypatch):
        monkeypatch.setattr(tr, "_loss", lambda *a, **k: Tensor(np.array(np.nan)))
        with pytest.raises(NonFiniteLoss):
            tr.train(TINY, spheres())

    def test_curve_csv(self, tmp_path):
        tr.write_curve(tmp_path / "l.csv", [1.0, 0.5])
        assert (tmp_path / "l.csv").read_text().splitlines() == ["iteration,loss", "1,1.0", "2,0.5"]


class TestEvaluate:
    def test_oracle_is_exact(self):
        ds = spheres(20)
        rep = tr.evaluate(tr.OraclePredictor(), ds, "continuous", 8, seed=1)
        assert rep.mean_error_deg == pytest.approx(0.0, abs=1e-9)
        assert rep.hist_counts.sum() == rep.count == 20

    def test_oracle_on_prerotated_labels(self):
        ds = spheres(5)
        ds.thetas = np.array([0.0, 10.0, 100.0, 200.0, 350.0])
        rep = tr.evaluate(tr.OraclePredictor(), ds, prerotated=True)
        assert rep.mean_error_deg == pytest.approx(0.0, abs=1e-9)

    def test_random_baseline(self):
        ds = Dataset(np.zeros((10_000, 4, 4, 1)))
        rep = tr.evaluate(tr.RandomPredictor(0), ds, "continuous", seed=2)
        # |difference| of two independent uniform angles is uniform on [0, 180]
        assert abs(rep.mean_error_deg - 90.0) <= 2.0
        assert rep.hist_counts.sum() == 10_000
        assert rep.errors_deg.min() >= 0 and rep.errors_deg.max() <= 180

    def test_two_error_readings_agree(self):
        ds = spheres(16)
        rep = tr.evaluate(small_regressor(32), ds, "continuous", 8)
        assert rep.consistency_gap_deg <= 1e-6

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            tr.evaluate(tr.OraclePredictor(), Dataset(np.zeros((0, 4, 4, 1))))

    def test_report_csv(self, tmp_path):
        rep = tr.evaluate(tr.OraclePredictor(), spheres(4), bins=4)
        tr.write_report(tmp_path / "r.csv", rep)
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "theta_lo,theta_hi,count,mean_error_deg" and len(lines) == 1 + 4 + 1 + 2


class TestCanonicalize:
    @pytest.mark.parametrize("theta", np.arange(0, 360, 15.0))
    def test_oracle_round_trip(self, theta):
        x = pad(blob_image(48, 4), optimal_padding(48))
        back, pred = tr.canonicalize(tr.OraclePredictor(), rotate(x, theta), label=theta)
        assert pred == pytest.approx(theta % 360)
        assert np.mean(np.abs(back.data - x.data)) <= 0.02

    def test_zero_prediction_is_identity(self):
        x = blob_image(20, 1)
        back, pred = tr.canonicalize(tr.OraclePredictor(0.0), x)
        assert pred == 0.0 and np.array_equal(back.data, x)

    def test_model_keeps_size(self):
        reg = small_regressor(33)
        x = blob_image(33, 2)
        back, pred = tr.canonicalize(reg, x)
        assert back.data.shape == x.shape and 0.0 <= pred < 360.0


class TestSaliency:
    def test_support_and_scale(self):
        reg = small_regressor(33)
        heat = tr.saliency(reg, blob_image(33, 3), theta_deg=40.0)
        covered = multiplicity_grid(reg.mask) > 0
        assert heat.shape == (reg.grid_size, reg.grid_size)
        assert np.all(heat[~covered] == 0.0)
        assert heat.max() == 1.0

    def test_quarter_turn_moves_support(self):
        reg = small_regressor(33)
        x = pad(blob_image(33, 6), reg.delta)
        a = tr.saliency(reg, x, 10.0) > 0
        b = tr.saliency(reg, rotate(x, 90.0, interp="nearest"), 10.0) > 0
        turned = rotate(a.astype(float), 90.0, interp="nearest").data[:, :, 0] > 0.5
        assert np.array_equal(turned, b)


class TestStability:
    def test_full_grid_and_zero_center(self):
        curve = tr.stability_sweep(small_regressor(32), spheres(3), radius=5)
        assert len(curve) == 121
        assert {(dx, dy) for dx, dy, _ in curve} == {(dx, dy) for dx in range(-5, 6) for dy in range(-5, 6)}
        assert dict(((dx, dy), d) for dx, dy, d in curve)[(0, 0)] == 0.0
        assert all(0.0 <= d <= 180.0 for _, _, d in curve)

    def test_csv(self, tmp_path):
        tr.write_stability(tmp_path / "s.csv", [(0, 0, 0.0), (1, 0, 2.5)])
        assert (tmp_path / "s.csv").read_text().splitlines()[0] == "dx,dy,mean_deviation_deg"


class TestEmbeddings:
    def test_shape(self, tmp_path):
        reg = small_regressor(33)
        mat = tr.export_embeddings(reg, blob_image(33, 0), [0.0], tmp_path / "e.rbt")
        assert mat.shape == (8, 8)
        assert rbt.read_tensor(tmp_path / "e.rbt").shape == (8, 8)

    def test_bit_identical(self, tmp_path):
        reg = small_regressor(33)
        orbit = [0.0, 45.0, 90.0]
        tr.export_embeddings(reg, blob_image(33, 0), orbit, tmp_path / "a.rbt")
        tr.export_embeddings(reg, blob_image(33, 0), orbit, tmp_path / "b.rbt")
        assert (tmp_path / "a.rbt").read_bytes() == (tmp_path / "b.rbt").read_bytes()

    def test_orbit_rows_follow_the_shift(self):
        reg = small_regressor(33, beams=8)
        orbit = [k * 45.0 for k in range(8)]
        mat = tr.embeddings(reg, blob_image(33, 7), orbit)
        L = mat.shape[1]
        rows = mat.reshape(8, 8, L)
        for k in range(8):
            for i in range(8):
                a, b = rows[k, i], rows[0, (i - k) % 8]
                cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
                assert cos >= 0.9


def test_regressor_round_trip(tmp_path):
    res = tr.train(TINY, spheres())
    res.regressor.save(tmp_path / "m.ckpt")
    back, meta = tr.Regressor.load(tmp_path / "m.ckpt")
    x = spheres(2).images
    assert back.image_size == 32 and meta["image_size"] == 32
    assert np.allclose(back.predict_degrees(x), res.regressor.predict_degrees(x), atol=1e-4)
