"""Steering model, sign generator and discriminator.

The steering model is a 3-d CNN over a video slice laid out as
(batch, channels, frames, height, width): a stack of conv3d + ReLU blocks, a
flatten, and a two-layer dense head producing one angle in degrees per slice.
`encoder_split` marks how many conv blocks form the encoder E that conditions
the generator; the remaining blocks belong to the head.
"""

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigurationError, ContractError, DimensionError, NumericError, TrainingError
from .layers import Conv2dLayer, Conv3dLayer, DenseLayer, conv3d_output_shape, upsample_nearest
from .optim import Adam
from .scene import VideoSlice, augment_frames
from .tensor import Tape, Tensor, as_tensor, make_rng

logger = logging.getLogger(__name__)

LOSS_KINDS = ("mse", "l1")
D_LOGIT_BOUND = 30.0


@dataclass
class ModelSpec:
    """Architecture of the steering model and its input contract."""

    window: int = 20
    channels: int = 3
    height: int = 64
    width: int = 64
    conv_channels: tuple[int, ...] = (8, 16, 16)
    kernels: tuple[tuple[int, int, int], ...] = ((3, 5, 5), (3, 3, 3), (3, 3, 3))
    strides: tuple[tuple[int, int, int], ...] = ((1, 2, 2), (2, 2, 2), (2, 2, 2))
    padding: tuple[tuple[int, int, int], ...] = ((1, 2, 2), (1, 1, 1), (1, 1, 1))
    dense: int = 32
    encoder_split: Optional[int] = None
    seed: int = 0
    name: str = "steering"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelSpec":
        values = dict(data)
        if "conv_channels" in values:
            values["conv_channels"] = tuple(int(c) for c in values["conv_channels"])
        for key in ("kernels", "strides", "padding"):
            if key in values:
                values[key] = tuple(tuple(int(v) for v in triple) for triple in values[key])
        return cls(**values)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        for key in ("conv_channels", "kernels", "strides", "padding"):
            data[key] = [list(v) if isinstance(v, tuple) else v for v in data[key]]
        data["encoder_split"] = self.split
        return data

    @property
    def split(self) -> int:
        return len(self.conv_channels) if self.encoder_split is None else int(self.encoder_split)

    @property
    def frame_geometry(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)

    def validate(self) -> list[str]:
        """Validate the architecture, return list of errors."""
        errors = []
        layers = len(self.conv_channels)
        if layers == 0:
            errors.append("model.conv_channels must name at least one conv block")
        if not (len(self.kernels) == len(self.strides) == len(self.padding) == layers):
            errors.append(
                f"model: conv_channels, kernels, strides and padding need one entry per block "
                f"(got {layers}, {len(self.kernels)}, {len(self.strides)}, {len(self.padding)})"
            )
        if self.window < 1:
            errors.append(f"model.window must be >= 1, got {self.window}")
        if self.dense < 1:
            errors.append(f"model.dense must be >= 1, got {self.dense}")
        if not 1 <= self.split <= layers:
            errors.append(f"model.encoder_split must lie in [1, {layers}], got {self.split}")
        if self.name in ("", ".", "..") or any(c in self.name for c in "/\\"):
            errors.append(f"model.name must be usable as a directory name, got '{self.name}'")
        return errors


@dataclass
class TrainConfig:
    """Steering-model training settings; lr_g and lr_d are the attack defaults."""

    lr: float = 1e-3
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    slice_length: int = 20
    epochs: int = 200
    batch_size: int = 8
    seed: int = 0
    loss: str = "mse"
    val_fraction: float = 0.2
    augment_strength: float = 0.3
    windows: str = "all"
    scenes_for_training: list[str] = field(default_factory=list)

    def validate(self) -> list[str]:
        errors = []
        if self.slice_length < 1:
            errors.append(f"train.slice_length must be >= 1, got {self.slice_length}")
        for name in ("lr", "lr_g", "lr_d"):
            if getattr(self, name) <= 0:
                errors.append(f"train.{name} must be > 0, got {getattr(self, name)}")
        if self.epochs < 1:
            errors.append(f"train.epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            errors.append(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.loss not in LOSS_KINDS:
            errors.append(f"train.loss must be one of {LOSS_KINDS}, got '{self.loss}'")
        if not 0.0 <= self.val_fraction < 1.0:
            errors.append(f"train.val_fraction must lie in [0, 1), got {self.val_fraction}")
        if not 0.0 <= self.augment_strength <= 1.0:
            errors.append(f"train.augment_strength must lie in [0, 1], got {self.augment_strength}")
        if self.windows not in ("all", "last"):
            errors.append(f"train.windows must be 'all' or 'last', got '{self.windows}'")
        return errors


def regression_loss(pred: Tensor, target: Union[Tensor, np.ndarray], kind: str = "mse") -> Tensor:
    """l_f: mean squared or mean absolute difference."""
    diff = pred - as_tensor(target)
    if kind == "mse":
        return diff.square().mean()
    if kind == "l1":
        return diff.abs().mean()
    raise ConfigurationError(f"Unknown loss kind '{kind}'; expected one of {LOSS_KINDS}")


def _named(prefix: str, params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {f"{prefix}.{name}": p for name, p in params.items()}


def checksum(params: dict[str, Tensor]) -> str:
    """SHA-256 over parameter names, shapes and float64 bytes."""
    digest = hashlib.sha256()
    for name in sorted(params):
        data = np.ascontiguousarray(params[name].data, dtype="<f8")
        digest.update(name.encode("utf-8"))
        digest.update(str(data.shape).encode("ascii"))
        digest.update(data.tobytes())
    return digest.hexdigest()


def assign_parameters(params: dict[str, Tensor], arrays: dict[str, np.ndarray], source: str) -> None:
    missing = sorted(set(params) - set(arrays))
    if missing:
        raise DimensionError(f"{source} lacks parameters: {', '.join(missing)}")
    for name, p in params.items():
        if arrays[name].shape != p.shape:
            raise DimensionError(f"{source}: '{name}' has shape {arrays[name].shape}, model expects {p.shape}")
        p.data = np.array(arrays[name], dtype=np.float64)


class SteeringModel:
    """3-d CNN regression f with an encoder/head split."""

    def __init__(self, spec: ModelSpec) -> None:
        errors = [e for e in spec.validate() if "encoder_split" not in e]
        if errors:
            raise ConfigurationError("Model specification invalid:\n" + "\n".join(f"  - {e}" for e in errors))
        self.spec = spec
        rng = make_rng(spec.seed)
        self.convs: list[Conv3dLayer] = []
        extent = (spec.window, spec.height, spec.width)
        self.activation_shapes: list[tuple[int, ...]] = []
        in_channels = spec.channels
        for out_channels, kernel, stride, pad in zip(spec.conv_channels, spec.kernels, spec.strides, spec.padding):
            layer = Conv3dLayer(in_channels, out_channels, kernel, stride, pad, rng)
            extent = conv3d_output_shape(extent, layer.kernel, layer.stride, layer.padding)
            if min(extent) < 1:
                raise ConfigurationError(
                    f"Conv block {len(self.convs)} reduces the input to extent {extent}\n"
                    "Use smaller kernels or strides, or a larger frame size / window."
                )
            self.convs.append(layer)
            self.activation_shapes.append((out_channels,) + extent)
            in_channels = out_channels
        self.feature_size = int(np.prod(self.activation_shapes[-1]))
        self.hidden = DenseLayer(self.feature_size, spec.dense, rng)
        self.output = DenseLayer(spec.dense, 1, rng, gain=1.0)

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for i, conv in enumerate(self.convs):
            params.update(_named(f"conv{i}", conv.params))
        params.update(_named("hidden", self.hidden.params))
        params.update(_named("output", self.output.params))
        return params

    def checksum(self) -> str:
        return checksum(self.parameters())

    @property
    def encoder_size(self) -> int:
        return int(np.prod(self.activation_shapes[self._split() - 1]))

    def _split(self) -> int:
        split = self.spec.split
        if not 1 <= split <= len(self.convs):
            raise ConfigurationError(
                f"encoder_split {split} is invalid for a model with {len(self.convs)} conv blocks\n"
                f"Choose a value in [1, {len(self.convs)}]."
            )
        return split

    def _convs(self, x: Tensor, layers: Sequence[Conv3dLayer], tape: Optional[Tape]) -> Tensor:
        for layer in layers:
            x = layer(x, tape).relu()
        return x

    def _dense(self, features: Tensor, tape: Optional[Tape]) -> Tensor:
        hidden = self.hidden(features, tape).relu()
        return self.output(hidden, tape).reshape(features.shape[0])

    def forward(self, x: Tensor, tape: Optional[Tape] = None) -> Tensor:
        """(b, c, n, h, w) slices to (b,) angles in degrees."""
        self._check_input(x)
        return self._dense(self._convs(x, self.convs, tape).flatten(), tape)

    __call__ = forward

    def encode_tensor(self, x: Tensor, tape: Optional[Tape] = None) -> Tensor:
        """Flattened activations after the encoder blocks, shape (b, encoder_size)."""
        split = self._split()
        self._check_input(x)
        return self._convs(x, self.convs[:split], tape).flatten()

    def head(self, features: Tensor, tape: Optional[Tape] = None) -> Tensor:
        split = self._split()
        if features.ndim != 2 or features.shape[1] != self.encoder_size:
            raise DimensionError(f"Head expects (b, {self.encoder_size}) features, got {features.shape}")
        x = features.reshape((features.shape[0],) + self.activation_shapes[split - 1])
        return self._dense(self._convs(x, self.convs[split:], tape).flatten(), tape)

    def _check_input(self, x: Tensor) -> None:
        s = self.spec
        expected = (s.channels, s.window, s.height, s.width)
        if x.ndim != 5 or x.shape[1:] != expected:
            raise DimensionError(f"Steering model expects input of shape (b, *{expected}), got {x.shape}")

    def save(self, path: Path, meta: Optional[dict[str, Any]] = None) -> Path:
        info = {"kind": "steering", "spec": self.spec.to_dict(), **(meta or {})}
        return save_checkpoint(path, self.parameters(), meta=info)

    @classmethod
    def load(cls, path: Path) -> "SteeringModel":
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "steering" or "spec" not in meta:
            raise ConfigurationError(f"{path} is not a steering-model checkpoint")
        model = cls(ModelSpec.from_dict(meta["spec"]))
        assign_parameters(model.parameters(), arrays, str(path))
        logger.info(f"Loaded steering model from {path} (checksum {model.checksum()[:12]})")
        return model


# ---- slices as model input -----------------------------------------------


def window_index(n: int, window: int) -> np.ndarray:
    """(n, window) frame indices; row t ends at frame t, earlier rows repeat frame 0."""
    return np.clip(np.arange(n)[:, None] - window + 1 + np.arange(window)[None, :], 0, None)


def slice_to_input(frames: Union[Tensor, np.ndarray]) -> Tensor:
    """(n, c, h, w) frames to a (1, c, n, h, w) batch of one slice."""
    x = as_tensor(frames)
    n, c, h, w = x.shape
    return x.transpose(1, 0, 2, 3).reshape(1, c, n, h, w)


def causal_windows(frames: Union[Tensor, np.ndarray], window: int) -> Tensor:
    """(n, c, h, w) frames to n windows (n, c, window, h, w) ending at each frame."""
    x = as_tensor(frames)
    idx = window_index(x.shape[0], window)
    return x[idx].transpose(0, 2, 1, 3, 4)


def check_geometry(model: SteeringModel, slice_: VideoSlice, exact_length: bool = True) -> None:
    if slice_.geometry != model.spec.frame_geometry:
        raise DimensionError(
            f"Slice frames are {slice_.geometry} (c, h, w) but the model expects {model.spec.frame_geometry}"
        )
    if exact_length and len(slice_) != model.spec.window:
        raise DimensionError(f"Slice has {len(slice_)} frames but the model consumes {model.spec.window}")


def steering_forward(model: SteeringModel, slice_: VideoSlice) -> np.ndarray:
    """One angle for the slice, broadcast to its n frames."""
    check_geometry(model, slice_)
    angle = model(slice_to_input(slice_.frames)).item()
    return np.full(len(slice_), angle)


def sliding_predictions(model: SteeringModel, frames: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Per-frame angles: the prediction of the window ending at each frame."""
    frames = np.asarray(frames, dtype=np.float64)
    if tuple(frames.shape[1:]) != model.spec.frame_geometry:
        raise DimensionError(
            f"Frames are {frames.shape[1:]} (c, h, w) but the model expects {model.spec.frame_geometry}"
        )
    idx = window_index(frames.shape[0], model.spec.window)
    out = np.empty(frames.shape[0])
    for start in range(0, frames.shape[0], batch_size):
        rows = idx[start : start + batch_size]
        batch = Tensor._wrap(frames[rows].transpose(0, 2, 1, 3, 4))
        out[start : start + len(rows)] = model(batch).data
    return out


def encode(model: SteeringModel, slice_: VideoSlice) -> np.ndarray:
    """Fixed-length feature vector E(X) for one slice."""
    model._split()
    check_geometry(model, slice_)
    return model.encode_tensor(slice_to_input(slice_.frames)).data[0].copy()


# ---- training ------------------------------------------------------------


@dataclass
class TrainResult:
    losses: list[float]
    val_mse: list[float]
    best_epoch: int
    train_scenes: list[str]
    val_scenes: list[str]
    checkpoint: Optional[Path] = None


def split_scenes(dataset: Sequence[VideoSlice], val_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded scene-level split; at least one scene is always kept for training."""
    order = make_rng(seed, 1).permutation(len(dataset))
    n_val = int(round(len(dataset) * val_fraction)) if len(dataset) > 1 else 0
    n_val = min(n_val, len(dataset) - 1)
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


def _training_windows(
    dataset: Sequence[VideoSlice], members: Sequence[int], window: int, mode: str
) -> tuple[np.ndarray, np.ndarray]:
    inputs = []
    labels = []
    for i in members:
        slice_ = dataset[i]
        idx = window_index(len(slice_), window)
        rows = range(len(slice_)) if mode == "all" else [len(slice_) - 1]
        for t in rows:
            inputs.append(slice_.frames[idx[t]].transpose(1, 0, 2, 3))
            labels.append(slice_.angles[t])
    return np.stack(inputs), np.array(labels)


def validation_mse(model: SteeringModel, dataset: Sequence[VideoSlice], members: Sequence[int]) -> float:
    if not members:
        return float("nan")
    errors = [sliding_predictions(model, dataset[i].frames) - dataset[i].angles for i in members]
    return float(np.mean(np.concatenate(errors) ** 2))


def _snapshot(model: SteeringModel) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.parameters().items()}


def train_steering(
    model: SteeringModel, dataset: Sequence[VideoSlice], cfg: TrainConfig, out_dir: Optional[Path] = None
) -> TrainResult:
    """Fit the steering model on sliding windows of the dataset's slices.

    The model ends up holding the parameters of the epoch with the lowest
    validation MSE (the final epoch when there is no validation split).
    Writes `steering.pgt` and `loss_curve.csv` to `out_dir` when given.

    Raises:
        ContractError: If the dataset is empty.
        DimensionError: If slices disagree with the model geometry.
        TrainingError: If the loss becomes non-finite; the model is reset to
            the last finite parameters, which are also saved when `out_dir` is set.
    """
    if not dataset:
        raise ContractError("Training needs at least one slice")
    errors = cfg.validate()
    if errors:
        raise ConfigurationError("Training configuration invalid:\n" + "\n".join(f"  - {e}" for e in errors))
    for slice_ in dataset:
        check_geometry(model, slice_, exact_length=False)

    train_idx, val_idx = split_scenes(dataset, cfg.val_fraction, cfg.seed)
    inputs, labels = _training_windows(dataset, train_idx, model.spec.window, cfg.windows)
    logger.info(
        f"Training steering model on {len(train_idx)} scenes ({len(labels)} windows), "
        f"validating on {len(val_idx)}, {cfg.epochs} epochs"
    )
    optimizer = Adam(model.parameters(), cfg.lr)
    losses: list[float] = []
    val_curve: list[float] = []
    last_finite = _snapshot(model)
    best = (float("inf"), -1, last_finite)

    for epoch in range(cfg.epochs):
        order = make_rng(cfg.seed, 2, epoch).permutation(len(labels))
        total = 0.0
        try:
            for start in range(0, len(order), cfg.batch_size):
                rows = order[start : start + cfg.batch_size]
                batch = inputs[rows]
                if cfg.augment_strength > 0:
                    batch = np.stack(
                        [
                            augment_frames(w, make_rng(cfg.seed, 3, epoch, int(r)), cfg.augment_strength)
                            for w, r in zip(batch, rows)
                        ]
                    )
                tape = Tape()
                optimizer.zero_grad()
                loss = regression_loss(model(Tensor._wrap(batch), tape), labels[rows], cfg.loss)
                if not np.isfinite(loss.item()):
                    raise NumericError(f"non-finite training loss {loss.item()}")
                tape.backward(loss)
                optimizer.step()
                total += loss.item() * len(rows)
        except NumericError as e:
            assign_parameters(model.parameters(), last_finite, "last finite snapshot")
            checkpoint = None
            if out_dir is not None:
                checkpoint = model.save(out_dir / "steering.last_finite.pgt", {"epoch": epoch - 1})
            logger.error(f"Training diverged at epoch {epoch}: {e}")
            raise TrainingError(
                f"Training diverged at epoch {epoch}: {e}\nLower train.lr or disable augmentation and retry.",
                checkpoint=checkpoint,
                losses=losses,
            ) from e

        epoch_loss = total / len(labels)
        losses.append(epoch_loss)
        last_finite = _snapshot(model)
        val = validation_mse(model, dataset, val_idx)
        val_curve.append(val)
        score = val if val_idx else epoch_loss
        if score <= best[0] or not val_idx:
            best = (score, epoch, last_finite)
        if epoch % 10 == 0 or epoch == cfg.epochs - 1:
            logger.info(f"epoch {epoch}: train {cfg.loss} {epoch_loss:.5f}, val mse {val:.5f}")

    assign_parameters(model.parameters(), best[2], "best-validation snapshot")
    result = TrainResult(
        losses=losses,
        val_mse=val_curve,
        best_epoch=best[1],
        train_scenes=[dataset[i].meta.name for i in train_idx],
        val_scenes=[dataset[i].meta.name for i in val_idx],
    )
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        result.checkpoint = model.save(
            out_dir / "steering.pgt",
            {"best_epoch": best[1], "train_scenes": result.train_scenes, "val_scenes": result.val_scenes},
        )
        pd.DataFrame({"epoch": np.arange(len(losses)), "train_loss": losses, "val_mse": val_curve}).to_csv(
            out_dir / "loss_curve.csv", index=False
        )
    return result


# ---- generator and discriminator -----------------------------------------


class Generator:
    """Dense seed followed by three upsample + conv blocks and a sigmoid."""

    widths = (64, 32, 16)

    def __init__(self, feature_size: int, sign_size: int = 32, channels: int = 3, seed: int = 0) -> None:
        blocks = len(self.widths)
        if sign_size % (2**blocks) or sign_size < 2**blocks:
            raise ConfigurationError(
                f"Generator sign size must be a positive multiple of {2 ** blocks}, got {sign_size}"
            )
        rng = make_rng(seed, 11)
        self.feature_size = feature_size
        self.sign_size = sign_size
        self.channels = channels
        self.base = sign_size // (2**blocks)
        self.seed_layer = DenseLayer(feature_size, self.widths[0] * self.base * self.base, rng, gain=1.0)
        outs = self.widths[1:] + (channels,)
        self.convs = [Conv2dLayer(i, o, 3, 1, 1, rng) for i, o in zip(self.widths, outs)]

    def parameters(self) -> dict[str, Tensor]:
        params = _named("seed", self.seed_layer.params)
        for i, conv in enumerate(self.convs):
            params.update(_named(f"conv{i}", conv.params))
        return params

    def __call__(self, features: Tensor, tape: Optional[Tape] = None) -> Tensor:
        """(b, feature_size) to (b, c, S, S) signs in [0, 1]."""
        b = features.shape[0]
        x = self.seed_layer(features, tape).reshape(b, self.widths[0], self.base, self.base)
        for i, conv in enumerate(self.convs):
            x = conv(upsample_nearest(x, 2), tape)
            x = x.relu() if i < len(self.convs) - 1 else x.sigmoid()
        return x


def generate_sign(G: Generator, feature: Union[Tensor, np.ndarray], tape: Optional[Tape] = None) -> Tensor:
    """S = G(feature) for one feature vector, shape (c, S, S)."""
    f = as_tensor(feature)
    if f.ndim != 1 or f.shape[0] != G.feature_size:
        raise DimensionError(f"Generator expects a feature vector of length {G.feature_size}, got shape {f.shape}")
    out = G(f.reshape(1, G.feature_size), tape)
    return out.reshape(G.channels, G.sign_size, G.sign_size)


class Discriminator:
    """Two stride-2 conv blocks and a dense logit, squashed strictly inside (0, 1)."""

    def __init__(self, sign_size: int = 32, channels: int = 3, seed: int = 0) -> None:
        if sign_size % 4 or sign_size < 4:
            raise ConfigurationError(f"Discriminator sign size must be a positive multiple of 4, got {sign_size}")
        rng = make_rng(seed, 12)
        self.sign_size = sign_size
        self.channels = channels
        self.convs = [Conv2dLayer(channels, 8, 4, 2, 1, rng), Conv2dLayer(8, 16, 4, 2, 1, rng)]
        self.logit = DenseLayer(16 * (sign_size // 4) ** 2, 1, rng, gain=1.0)

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for i, conv in enumerate(self.convs):
            params.update(_named(f"conv{i}", conv.params))
        params.update(_named("logit", self.logit.params))
        return params

    def __call__(self, signs: Tensor, tape: Optional[Tape] = None) -> Tensor:
        """(b, c, S, S) or (c, S, S) signs to (b,) scores."""
        x = signs if signs.ndim == 4 else signs.reshape(1, *signs.shape)
        if x.shape[1:] != (self.channels, self.sign_size, self.sign_size):
            raise DimensionError(
                f"Discriminator expects ({self.channels}, {self.sign_size}, {self.sign_size}) signs, got {signs.shape}"
            )
        for conv in self.convs:
            x = conv(x, tape).relu()
        z = self.logit(x.flatten(), tape).reshape(x.shape[0])
        return ((z / D_LOGIT_BOUND).tanh() * D_LOGIT_BOUND).sigmoid()
