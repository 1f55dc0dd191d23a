import numpy as np
import pandas as pd
import pytest
from conftest import (
    TINY_FRAMES,
    TINY_SIGN,
    TINY_SIZE,
    assert_param_grads_close,
    tiny_model_spec,
    tiny_scene_config,
)

from physgan_lab.checkpoint import save_checkpoint
from physgan_lab.errors import ConfigurationError, ContractError, DimensionError, TrainingError
from physgan_lab.nets import (
    Discriminator,
    Generator,
    ModelSpec,
    SteeringModel,
    TrainConfig,
    causal_windows,
    encode,
    generate_sign,
    regression_loss,
    slice_to_input,
    sliding_predictions,
    split_scenes,
    steering_forward,
    train_steering,
    validation_mse,
    window_index,
)
from physgan_lab.scene import builtin_sign, render_scene
from physgan_lab.tensor import Tensor

STEERING_PARAMS = sorted(SteeringModel(tiny_model_spec()).parameters())
GENERATOR_PARAMS = sorted(Generator(feature_size=6, sign_size=TINY_SIGN).parameters())
DISCRIMINATOR_PARAMS = sorted(Discriminator(sign_size=TINY_SIGN).parameters())


class TestModelSpec:
    def test_default_spec_is_valid(self):
        """Test the default architecture validates."""
        assert ModelSpec().validate() == []

    def test_block_count_mismatch(self):
        """Test conv_channels and kernels must have one entry per block."""
        with pytest.raises(ConfigurationError) as exc_info:
            SteeringModel(tiny_model_spec(conv_channels=(2,)))

        assert "one entry per block" in str(exc_info.value)

    def test_over_reduction_is_rejected(self):
        """Test an architecture that shrinks the input to nothing is rejected."""
        with pytest.raises(ConfigurationError) as exc_info:
            SteeringModel(tiny_model_spec(height=4, width=4, padding=((0, 0, 0), (0, 0, 0))))

        assert "reduces the input" in str(exc_info.value)

    def test_dict_round_trip(self):
        """Test from_dict(to_dict()) rebuilds an identical spec."""
        spec = tiny_model_spec(encoder_split=1)

        assert ModelSpec.from_dict(spec.to_dict()) == spec


class TestRegressionLoss:
    def test_mse(self):
        """Test mse is the mean squared difference."""
        assert regression_loss(Tensor([1.0, 2.0]), np.zeros(2)).item() == pytest.approx(2.5)

    def test_l1(self):
        """Test l1 is the mean absolute difference."""
        assert regression_loss(Tensor([1.0, -2.0]), np.zeros(2), "l1").item() == pytest.approx(1.5)

    def test_unknown_kind(self):
        """Test an unknown loss kind raises ConfigurationError."""
        with pytest.raises(ConfigurationError):
            regression_loss(Tensor([1.0]), np.zeros(1), "huber")


class TestWindows:
    def test_window_index_pads_with_first_frame(self):
        """Test early windows repeat frame 0 and later ones end at their frame."""
        idx = window_index(5, 3)

        assert idx.tolist() == [[0, 0, 0], [0, 0, 1], [0, 1, 2], [1, 2, 3], [2, 3, 4]]

    def test_causal_windows_shape(self, tiny_slice):
        """Test causal_windows stacks one (c, window, h, w) input per frame."""
        windows = causal_windows(tiny_slice.frames, 2)

        assert windows.shape == (TINY_FRAMES, 3, 2, TINY_SIZE, TINY_SIZE)
        np.testing.assert_array_equal(windows.data[3, :, 1], tiny_slice.frames[3])
        np.testing.assert_array_equal(windows.data[0, :, 0], tiny_slice.frames[0])

    def test_slice_to_input_layout(self, tiny_slice):
        """Test a slice becomes a (1, c, n, h, w) batch."""
        x = slice_to_input(tiny_slice.frames)

        assert x.shape == (1, 3, TINY_FRAMES, TINY_SIZE, TINY_SIZE)
        np.testing.assert_array_equal(x.data[0, :, 2], tiny_slice.frames[2])


class TestSteeringModel:
    def test_forward_shape(self, tiny_model, tiny_slice):
        """Test the model maps a batch of slices to one angle each."""
        x = Tensor(np.stack([slice_to_input(tiny_slice.frames).data[0]] * 2))

        assert tiny_model(x).shape == (2,)

    def test_wrong_input_shape(self, tiny_model):
        """Test a wrongly shaped input raises DimensionError."""
        with pytest.raises(DimensionError) as exc_info:
            tiny_model(Tensor(np.zeros((1, 3, TINY_FRAMES, 8, 8))))

        assert "expects input of shape" in str(exc_info.value)

    def test_steering_forward_broadcasts_one_angle(self, tiny_model, tiny_slice):
        """Test steering_forward repeats the slice's angle for every frame."""
        angles = steering_forward(tiny_model, tiny_slice)

        assert angles.shape == (TINY_FRAMES,)
        assert np.all(angles == angles[0])

    def test_steering_forward_needs_window_length(self, tiny_slice):
        """Test a slice of the wrong length raises DimensionError."""
        model = SteeringModel(tiny_model_spec(window=2))

        with pytest.raises(DimensionError) as exc_info:
            steering_forward(model, tiny_slice)

        assert "consumes 2" in str(exc_info.value)

    def test_sliding_prediction_of_last_frame_matches_forward(self, tiny_model, tiny_slice):
        """Test the window ending at the last frame is the whole slice."""
        per_frame = sliding_predictions(tiny_model, tiny_slice.frames, batch_size=3)

        assert per_frame.shape == (TINY_FRAMES,)
        assert per_frame[-1] == pytest.approx(steering_forward(tiny_model, tiny_slice)[0], abs=1e-12)

    @pytest.mark.parametrize("split", [1, 2])
    def test_head_of_encoding_equals_forward(self, tiny_slice, split):
        """Test head(encode(x)) reproduces the full forward pass."""
        model = SteeringModel(tiny_model_spec(encoder_split=split))
        x = slice_to_input(tiny_slice.frames)

        features = model.encode_tensor(x)

        assert features.shape == (1, model.encoder_size)
        assert model.head(features).item() == pytest.approx(model(x).item(), abs=1e-12)

    def test_encoder_size_follows_split(self):
        """Test the feature length is the activation size at the split."""
        assert SteeringModel(tiny_model_spec(encoder_split=1)).encoder_size == 2 * 4 * 8 * 8
        assert SteeringModel(tiny_model_spec()).encoder_size == 3 * 2 * 4 * 4

    def test_invalid_split_on_encode(self, tiny_slice):
        """Test an out-of-range encoder split raises ConfigurationError when encoding."""
        model = SteeringModel(tiny_model_spec(encoder_split=5))

        with pytest.raises(ConfigurationError) as exc_info:
            encode(model, tiny_slice)

        assert "Choose a value in [1, 2]" in str(exc_info.value)

    def test_encode_returns_feature_vector(self, tiny_model, tiny_slice):
        """Test encode returns a flat vector of encoder_size."""
        assert encode(tiny_model, tiny_slice).shape == (tiny_model.encoder_size,)

    def test_encode_separates_slices(self, tiny_model, tiny_slice):
        """Test different slices encode to different features and an all-black slice to zeros."""
        inverted = tiny_slice.with_frames(1.0 - tiny_slice.frames)
        black = tiny_slice.with_frames(np.zeros_like(tiny_slice.frames))

        a = encode(tiny_model, tiny_slice)
        b = encode(tiny_model, inverted)

        assert not np.allclose(a, b)
        np.testing.assert_array_equal(encode(tiny_model, black), np.zeros(tiny_model.encoder_size))

    @pytest.mark.parametrize("bias", [0.0, 0.7])
    def test_zero_weights_return_output_bias(self, bias, tiny_slice):
        """Test a model with all weights zeroed predicts its output bias for every frame."""
        model = SteeringModel(tiny_model_spec())
        for name, param in model.parameters().items():
            if name.endswith(".weight"):
                param.data[...] = 0.0
        model.parameters()["output.bias"].data[...] = bias

        np.testing.assert_array_equal(steering_forward(model, tiny_slice), np.full(TINY_FRAMES, bias))

    def test_head_rejects_wrong_features(self, tiny_model):
        """Test the head checks the feature length."""
        with pytest.raises(DimensionError):
            tiny_model.head(Tensor(np.zeros((1, 7))))

    def test_checksum_is_seeded(self):
        """Test equal seeds give equal checksums and other seeds differ."""
        a = SteeringModel(tiny_model_spec(seed=1)).checksum()

        assert a == SteeringModel(tiny_model_spec(seed=1)).checksum()
        assert a != SteeringModel(tiny_model_spec(seed=2)).checksum()

    def test_save_and_load(self, tiny_model, tmp_path):
        """Test a saved model loads with identical parameters and spec."""
        path = tiny_model.save(tmp_path / "m" / "steering.pgt")

        loaded = SteeringModel.load(path)

        assert loaded.checksum() == tiny_model.checksum()
        assert loaded.spec.to_dict() == tiny_model.spec.to_dict()

    def test_load_rejects_other_checkpoints(self, tmp_path):
        """Test a checkpoint of another kind is not loaded as a steering model."""
        path = save_checkpoint(tmp_path / "g.pgt", {"w": np.zeros(2)}, meta={"kind": "generator"})

        with pytest.raises(ConfigurationError):
            SteeringModel.load(path)


class TestTraining:
    @pytest.fixture
    def dataset(self):
        sign = builtin_sign("ring", TINY_SIGN)
        return [render_scene(tiny_scene_config(name=f"s{i}", texture_seed=i), sign) for i in range(2)]

    def test_split_keeps_a_training_scene(self):
        """Test the split never moves every scene into validation."""
        train, val = split_scenes([object()] * 3, 0.9, seed=0)

        assert len(train) >= 1
        assert sorted(train + val) == [0, 1, 2]

    def test_writes_checkpoint_and_loss_curve(self, tiny_model, dataset, tmp_path):
        """Test training writes steering.pgt and one loss row per epoch."""
        cfg = TrainConfig(epochs=2, batch_size=4, val_fraction=0.5, augment_strength=0.2)

        result = train_steering(tiny_model, dataset, cfg, tmp_path / "model")

        assert result.checkpoint == tmp_path / "model" / "steering.pgt"
        assert result.checkpoint.exists()
        curve = pd.read_csv(tmp_path / "model" / "loss_curve.csv")
        assert list(curve.columns) == ["epoch", "train_loss", "val_mse"]
        assert len(curve) == 2
        assert len(result.train_scenes) == 1 and len(result.val_scenes) == 1

    def test_model_keeps_best_validation_epoch(self, tiny_model, dataset):
        """Test the model ends with the parameters of its lowest validation MSE."""
        cfg = TrainConfig(epochs=3, batch_size=4, val_fraction=0.5, augment_strength=0.0, lr=1e-2)

        result = train_steering(tiny_model, dataset, cfg)

        _, val_idx = split_scenes(dataset, cfg.val_fraction, cfg.seed)
        assert result.val_mse[result.best_epoch] == min(result.val_mse)
        assert validation_mse(tiny_model, dataset, val_idx) == pytest.approx(min(result.val_mse))

    def test_training_is_deterministic(self, dataset):
        """Test identical seeds train to identical parameters."""
        cfg = TrainConfig(epochs=2, batch_size=4, val_fraction=0.0)
        a, b = SteeringModel(tiny_model_spec()), SteeringModel(tiny_model_spec())

        train_steering(a, dataset, cfg)
        train_steering(b, dataset, cfg)

        assert a.checksum() == b.checksum()

    def test_divergence_raises_training_error(self, tiny_model, dataset, tmp_path, mocker):
        """Test a non-finite loss restores the last finite parameters and saves them."""
        mocker.patch("physgan_lab.nets.regression_loss", return_value=Tensor(np.nan))
        before = tiny_model.checksum()

        with pytest.raises(TrainingError) as exc_info:
            train_steering(tiny_model, dataset, TrainConfig(epochs=2), tmp_path)

        assert "diverged at epoch 0" in str(exc_info.value)
        assert exc_info.value.checkpoint == tmp_path / "steering.last_finite.pgt"
        assert exc_info.value.checkpoint.exists()
        assert tiny_model.checksum() == before

    def test_empty_dataset(self, tiny_model):
        """Test training without slices raises ContractError."""
        with pytest.raises(ContractError):
            train_steering(tiny_model, [], TrainConfig())

    def test_invalid_config(self, tiny_model, dataset):
        """Test an invalid training config is reported in full."""
        with pytest.raises(ConfigurationError) as exc_info:
            train_steering(tiny_model, dataset, TrainConfig(epochs=0, loss="huber"))

        assert "train.epochs" in str(exc_info.value)
        assert "train.loss" in str(exc_info.value)


class TestGenerator:
    def test_sign_shape_and_range(self, rng):
        """Test generated signs have the configured size and lie in (0, 1)."""
        G = Generator(feature_size=10, sign_size=TINY_SIGN)

        sign = generate_sign(G, rng.normal(size=10))

        assert sign.shape == (3, TINY_SIGN, TINY_SIGN)
        assert sign.data.min() > 0.0 and sign.data.max() < 1.0

    def test_sign_size_must_divide(self):
        """Test sign sizes that are not multiples of 8 are rejected."""
        with pytest.raises(ConfigurationError) as exc_info:
            Generator(feature_size=4, sign_size=12)

        assert "multiple of 8" in str(exc_info.value)

    def test_feature_length_checked(self):
        """Test a feature vector of the wrong length raises DimensionError."""
        with pytest.raises(DimensionError):
            generate_sign(Generator(feature_size=4, sign_size=8), np.zeros(5))

    def test_seeded_initialisation(self, rng):
        """Test equal seeds give equal generators."""
        f = rng.normal(size=6)
        a = generate_sign(Generator(6, 8, seed=3), f).data
        b = generate_sign(Generator(6, 8, seed=3), f).data

        np.testing.assert_array_equal(a, b)


class TestDiscriminator:
    def test_scores_strictly_inside_unit_interval(self, rng):
        """Test scores lie strictly in (0, 1), even for extreme inputs."""
        D = Discriminator(sign_size=TINY_SIGN)
        signs = Tensor(np.stack([rng.uniform(size=(3, 8, 8)), np.full((3, 8, 8), 1e6)]))

        scores = D(signs).data

        assert scores.shape == (2,)
        assert np.all(scores > 0.0) and np.all(scores < 1.0)

    def test_single_sign_is_batched(self, rng):
        """Test a (c, S, S) sign is scored as a batch of one."""
        assert Discriminator(sign_size=8)(Tensor(rng.uniform(size=(3, 8, 8)))).shape == (1,)

    def test_wrong_sign_size(self, rng):
        """Test a sign of another size raises DimensionError."""
        with pytest.raises(DimensionError):
            Discriminator(sign_size=8)(Tensor(rng.uniform(size=(3, 12, 12))))

    def test_sign_size_must_divide(self):
        """Test sizes that are not multiples of 4 are rejected."""
        with pytest.raises(ConfigurationError):
            Discriminator(sign_size=6)


class TestParameterGradients:
    @pytest.mark.parametrize("name", STEERING_PARAMS)
    def test_steering_model(self, name, rng):
        """Test steering-model parameter gradients against central differences at random entries."""
        model = SteeringModel(tiny_model_spec())
        x = Tensor(rng.uniform(size=(2, 3, TINY_FRAMES, TINY_SIZE, TINY_SIZE)))
        weights = Tensor(rng.normal(size=2))

        checked = assert_param_grads_close(model.parameters(), name, lambda tape: (model(x, tape) * weights).sum(), rng)

        assert checked >= 1

    @pytest.mark.parametrize("name", GENERATOR_PARAMS)
    def test_generator(self, name, rng):
        """Test generator parameter gradients against central differences at random entries."""
        G = Generator(feature_size=6, sign_size=TINY_SIGN)
        features = Tensor(rng.normal(size=(2, 6)))
        weights = Tensor(rng.normal(size=(2, 3, TINY_SIGN, TINY_SIGN)))

        checked = assert_param_grads_close(G.parameters(), name, lambda tape: (G(features, tape) * weights).sum(), rng)

        assert checked >= 1

    @pytest.mark.parametrize("name", DISCRIMINATOR_PARAMS)
    def test_discriminator(self, name, rng):
        """Test discriminator parameter gradients against central differences at random entries."""
        D = Discriminator(sign_size=TINY_SIGN)
        signs = Tensor(rng.uniform(size=(3, 3, TINY_SIGN, TINY_SIGN)))
        weights = Tensor(rng.normal(size=3))

        checked = assert_param_grads_close(D.parameters(), name, lambda tape: (D(signs, tape) * weights).sum(), rng)

        assert checked >= 1

    @pytest.mark.parametrize(
        "params",
        [
            SteeringModel(tiny_model_spec()).parameters(),
            Generator(feature_size=6, sign_size=TINY_SIGN).parameters(),
            Discriminator(sign_size=TINY_SIGN).parameters(),
        ],
        ids=["steering", "generator", "discriminator"],
    )
    def test_each_network_gets_at_least_100_checks(self, params):
        """Test the per-parameter checks above add up to at least 100 entries per network."""
        assert sum(min(40, p.size) for p in params.values()) >= 100
