"""Adversarial sign generation: the PhysGAN losses and training loop plus baselines.

Approaches:
    physgan   G(E(X_orig)) trained against D and the frozen steering model
    fgsm      one signed-gradient step on every pixel of every frame
    physfgsm  one signed-gradient step inside the middle frame's quad, rectified
    rp2       Adam on sign pixels against the middle frame only
    noise     the original sign plus uniform noise
    original  the unmodified slice
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd
import tomli_w

from .errors import AttackError, ConfigurationError, ContractError, DimensionError, NumericError
from .nets import (
    LOSS_KINDS,
    Discriminator,
    Generator,
    SteeringModel,
    causal_windows,
    check_geometry,
    encode,
    generate_sign,
    regression_loss,
    slice_to_input,
    sliding_predictions,
)
from .optim import Adam
from .scene import VideoSlice, augment_frames, load_sign, load_slice, quantize, save_sign, save_slice
from .tensor import Tape, Tensor, as_tensor, make_rng
from .warp import plan_slice, rectify, substitute_frames, substitute_slice

logger = logging.getLogger(__name__)

APPROACHES = ("physgan", "fgsm", "physfgsm", "rp2", "noise", "original")
HISTORY_COLUMNS = ["iteration", "l_gan_d", "l_gan_g", "l_adv", "d_fake", "d_real_median"]
REAL_BATCH = 4
LOGIT_CLIP = 1e-3


@dataclass
class AttackConfig:
    """Hyperparameters shared by every approach."""

    beta: float = 10.0
    lambda_adv: float = 1.0
    iterations: int = 500
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    lr_pixels: float = 0.05
    d_steps: int = 1
    g_steps: int = 1
    loss: str = "mse"
    epsilon: float = 8.0 / 255.0
    seed: int = 0
    target: str = "prediction"
    prediction: str = "slice"
    g_update: str = "joint"
    real_jitter: float = 0.3
    sign_size: int = 32
    log_every: int = 50

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AttackConfig":
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def validate(self) -> list[str]:
        """Validate attack config, return list of errors."""
        errors = []
        if self.beta <= 0:
            errors.append(f"attack.beta must be > 0, got {self.beta}")
        if self.lambda_adv < 0:
            errors.append(f"attack.lambda_adv must be >= 0, got {self.lambda_adv}")
        if self.iterations < 1:
            errors.append(f"attack.iterations must be >= 1, got {self.iterations}")
        if self.epsilon < 0:
            errors.append(f"attack.epsilon must be >= 0, got {self.epsilon}")
        for name in ("lr_g", "lr_d", "lr_pixels"):
            if getattr(self, name) <= 0:
                errors.append(f"attack.{name} must be > 0, got {getattr(self, name)}")
        if self.d_steps < 1 or self.g_steps < 1:
            errors.append("attack.d_steps and attack.g_steps must be >= 1")
        if self.loss not in LOSS_KINDS:
            errors.append(f"attack.loss must be one of {LOSS_KINDS}, got '{self.loss}'")
        if self.target not in ("prediction", "ground_truth"):
            errors.append(f"attack.target must be 'prediction' or 'ground_truth', got '{self.target}'")
        if self.prediction not in ("slice", "sliding"):
            errors.append(f"attack.prediction must be 'slice' or 'sliding', got '{self.prediction}'")
        if self.g_update not in ("joint", "sequential"):
            errors.append(f"attack.g_update must be 'joint' or 'sequential', got '{self.g_update}'")
        if not 0.0 <= self.real_jitter <= 1.0:
            errors.append(f"attack.real_jitter must lie in [0, 1], got {self.real_jitter}")
        if self.log_every < 1:
            errors.append(f"attack.log_every must be >= 1, got {self.log_every}")
        return errors


@dataclass
class AttackArtifacts:
    """Everything one attack run produces."""

    approach: str
    scene: str
    seed: int
    config: dict[str, Any]
    sign: Optional[np.ndarray] = None
    adversarial: Optional[VideoSlice] = None
    history: dict[str, list[float]] = field(default_factory=lambda: {c: [] for c in HISTORY_COLUMNS})
    pred_orig: Optional[np.ndarray] = None
    pred_adv: Optional[np.ndarray] = None
    best_iteration: Optional[int] = None
    error: Optional[str] = None

    def record(self, **values: float) -> None:
        for column in HISTORY_COLUMNS:
            self.history[column].append(float(values.get(column, np.nan)))

    def save(self, path: Path) -> Path:
        """Write sign.png, losses.csv, predictions.csv, config.toml and seed."""
        path.mkdir(parents=True, exist_ok=True)
        if self.sign is not None:
            save_sign(self.sign, path / "sign.png")
        if self.adversarial is not None and self.sign is None:
            save_slice(self.adversarial.with_frames(quantize(self.adversarial.frames)), path / "adversarial")
        pd.DataFrame(self.history, columns=HISTORY_COLUMNS).to_csv(path / "losses.csv", index=False)
        if self.pred_orig is not None and self.pred_adv is not None:
            pd.DataFrame(
                {"frame": np.arange(len(self.pred_orig)), "pred_orig": self.pred_orig, "pred_adv": self.pred_adv}
            ).to_csv(path / "predictions.csv", index=False)
        status: dict[str, Any] = {"approach": self.approach, "scene": self.scene, "seed": self.seed}
        if self.best_iteration is not None:
            status["best_iteration"] = self.best_iteration
        if self.error is not None:
            status["error"] = self.error
        with open(path / "config.toml", "wb") as f:
            tomli_w.dump({"run": status, "attack": self.config}, f)
        (path / "seed").write_text(f"{self.seed}\n")
        return path


# ---- losses --------------------------------------------------------------


def adv_loss(
    pred_orig: Union[Tensor, np.ndarray], pred_adv: Union[Tensor, np.ndarray], beta: float, kind: str = "mse"
) -> Tensor:
    """beta * exp(-l_f(pred_orig, pred_adv) / beta), in (0, beta]."""
    if beta <= 0:
        raise ContractError(f"beta must be > 0, got {beta}")
    orig = as_tensor(pred_orig)
    adv = as_tensor(pred_adv)
    if orig.shape != adv.shape:
        raise DimensionError(f"Prediction vectors differ in shape: {orig.shape} vs {adv.shape}")
    if not (np.all(np.isfinite(orig.data)) and np.all(np.isfinite(adv.data))):
        raise NumericError("adv_loss received non-finite predictions")
    distance = regression_loss(adv, orig, kind)
    return (distance * (-1.0 / beta)).exp() * beta


def gan_loss(d_real: Union[Tensor, np.ndarray, float], d_fake: Union[Tensor, np.ndarray, float]) -> Tensor:
    """mean log D(real) + mean log(1 - D(fake)); both scores must lie strictly in (0, 1)."""
    real = as_tensor(d_real)
    fake = as_tensor(d_fake)
    for name, t in (("d_real", real), ("d_fake", fake)):
        if not np.all((t.data > 0.0) & (t.data < 1.0)):
            raise NumericError(f"gan_loss needs {name} strictly inside (0, 1); apply the sigmoid head first")
    return real.log().mean() + (1.0 - fake).log().mean()


def total_loss(gan: Union[Tensor, float], adv: Union[Tensor, float], lambda_adv: float) -> Tensor:
    """L = L_GAN + lambda * L_ADV."""
    return as_tensor(gan) + as_tensor(adv) * lambda_adv


# ---- helpers -------------------------------------------------------------


def _predict(model: SteeringModel, frames: Union[Tensor, np.ndarray], mode: str) -> Tensor:
    if mode == "sliding":
        return model(causal_windows(frames, model.spec.window))
    return model(slice_to_input(frames))


def reference_angles(model: SteeringModel, slice_: VideoSlice, cfg: AttackConfig) -> np.ndarray:
    """What the attack moves predictions away from: f(X_orig) or the ground truth."""
    if cfg.target == "ground_truth":
        return slice_.angles.copy() if cfg.prediction == "sliding" else slice_.angles[-1:].copy()
    return _predict(model, slice_.frames, cfg.prediction).data.copy()


def middle_index(slice_: VideoSlice) -> int:
    return len(slice_) // 2


def rectified_patch(slice_: VideoSlice, size: int, index: Optional[int] = None) -> np.ndarray:
    """The sign as seen in one frame (the middle one by default), resampled to size x size."""
    i = middle_index(slice_) if index is None else index
    return np.clip(rectify(slice_.frames[i], slice_.quads[i], (size, size)), 0.0, 1.0)


def _check_frozen(model: SteeringModel, before: str, approach: str) -> None:
    if model.checksum() != before:
        raise ContractError(f"{approach}: target-model parameters changed during the attack")


def _finish(artifacts: AttackArtifacts, model: SteeringModel, slice_: VideoSlice, adversarial: VideoSlice) -> None:
    artifacts.adversarial = adversarial
    artifacts.pred_orig = sliding_predictions(model, slice_.frames)
    artifacts.pred_adv = sliding_predictions(model, adversarial.frames)


# ---- PhysGAN -------------------------------------------------------------


def train_physgan(
    slice_: VideoSlice,
    model: SteeringModel,
    G: Generator,
    D: Discriminator,
    cfg: AttackConfig,
    original_sign: Optional[np.ndarray] = None,
) -> AttackArtifacts:
    """Alternate D ascent and G descent on L = L_GAN + lambda * L_ADV.

    The steering model is only ever evaluated with constant parameters; its
    checksum is compared before and after. The returned sign is the iterate
    with the lowest L_ADV among those D scores at least as real as the median
    real sample, or the final iterate when there is none. Both scores come from
    the discriminator left by the iteration's D steps, and D(fake) is taken on
    the very sign whose L_ADV is recorded.

    Raises:
        AttackError: On a non-finite loss; `partial` holds the artifacts so far.
    """
    errors = cfg.validate()
    if errors:
        raise ConfigurationError("Attack configuration invalid:\n" + "\n".join(f"  - {e}" for e in errors))
    check_geometry(model, slice_)
    before = model.checksum()
    if original_sign is None:
        original_sign = rectified_patch(slice_, G.sign_size)

    artifacts = AttackArtifacts("physgan", slice_.meta.name, cfg.seed, cfg.to_dict())
    feature = encode(model, slice_)
    plans = plan_slice(slice_.frames.shape[1:], (G.channels, G.sign_size, G.sign_size), slice_.quads)
    reference = reference_angles(model, slice_, cfg)
    g_opt = Adam(G.parameters(), cfg.lr_g)
    d_opt = Adam(D.parameters(), cfg.lr_d)
    jitter_rng = make_rng(cfg.seed, 21)

    def adversarial_loss(sign: Tensor) -> Tensor:
        x_adv = substitute_frames(slice_.frames, sign, slice_.quads, plans)
        return adv_loss(reference, _predict(model, x_adv, cfg.prediction), cfg.beta, cfg.loss)

    best_loss = np.inf
    best_sign: Optional[np.ndarray] = None
    try:
        for it in range(cfg.iterations):
            for _ in range(cfg.d_steps):
                fake = generate_sign(G, feature).data
                real = np.stack(
                    [augment_frames(original_sign, jitter_rng, cfg.real_jitter) for _ in range(REAL_BATCH)]
                )
                tape = Tape()
                d_opt.zero_grad()
                d_real = D(as_tensor(real), tape)
                l_gan_d = gan_loss(d_real, D(as_tensor(fake), tape))
                tape.backward(l_gan_d)
                d_opt.step(scale=-1.0)
            # D is fixed from here to the end of the iteration
            real_scores = D(as_tensor(real)).data.copy()

            for _ in range(cfg.g_steps):
                tape = Tape()
                g_opt.zero_grad()
                sign = generate_sign(G, feature, tape)
                d_fake = D(sign)
                l_gan_g = gan_loss(real_scores, d_fake)
                current = sign.data.copy()
                if cfg.g_update == "joint":
                    l_adv = adversarial_loss(sign)
                    tape.backward(total_loss(l_gan_g, l_adv, cfg.lambda_adv))
                    g_opt.step()
                else:
                    tape.backward(l_gan_g)
                    g_opt.step()
                    tape = Tape()
                    g_opt.zero_grad()
                    sign = generate_sign(G, feature, tape)
                    current = sign.data.copy()
                    l_adv = adversarial_loss(sign)
                    tape.backward(l_adv * cfg.lambda_adv)
                    g_opt.step()
            d_fake = D(as_tensor(current))

            values = {
                "iteration": it,
                "l_gan_d": l_gan_d.item(),
                "l_gan_g": l_gan_g.item(),
                "l_adv": l_adv.item(),
                "d_fake": float(d_fake.item()),
                "d_real_median": float(np.median(real_scores)),
            }
            artifacts.record(**values)
            if not all(np.isfinite(v) for v in values.values()):
                raise NumericError(f"non-finite loss at iteration {it}: {values}")
            if values["d_fake"] >= values["d_real_median"] and values["l_adv"] < best_loss:
                best_loss = values["l_adv"]
                best_sign = current
                artifacts.best_iteration = it
            if it % cfg.log_every == 0 or it == cfg.iterations - 1:
                logger.info(
                    f"physgan[{slice_.meta.name}] iter {it}: L_GAN(D) {values['l_gan_d']:.4f} "
                    f"L_GAN(G) {values['l_gan_g']:.4f} L_ADV {values['l_adv']:.4f} D(fake) {values['d_fake']:.3f}"
                )
    except NumericError as e:
        artifacts.error = str(e)
        artifacts.sign = best_sign
        logger.error(f"PhysGAN attack on '{slice_.meta.name}' aborted: {e}")
        raise AttackError(
            f"PhysGAN attack on '{slice_.meta.name}' aborted: {e}\n"
            "Lower attack.lr_g, attack.lr_d or attack.lambda_adv.",
            partial=artifacts,
        ) from e

    _check_frozen(model, before, "physgan")
    if best_sign is None:
        logger.warning("No iterate fooled the discriminator; using the final generator output")
        best_sign = generate_sign(G, feature).data.copy()
        artifacts.best_iteration = cfg.iterations
    artifacts.sign = best_sign
    _finish(artifacts, model, slice_, substitute_slice(slice_, best_sign))
    return artifacts


# ---- baselines -----------------------------------------------------------


def fgsm_full_frame(slice_: VideoSlice, model: SteeringModel, epsilon: float, kind: str = "mse") -> VideoSlice:
    """x' = clamp(x + eps * sign(grad), 0, 1) over whole frames.

    The gradient is that of the mean sliding-window loss against the ground
    truth, so each frame's direction combines every window it appears in.
    """
    if epsilon < 0:
        raise ContractError(f"epsilon must be >= 0, got {epsilon}")
    check_geometry(model, slice_, exact_length=False)
    before = model.checksum()
    tape = Tape()
    frames = tape.watch(Tensor._wrap(slice_.frames))
    loss = regression_loss(_predict(model, frames, "sliding"), slice_.angles, kind)
    tape.backward(loss)
    _check_frozen(model, before, "fgsm")
    assert frames.grad is not None
    perturbed = np.clip(slice_.frames + epsilon * np.sign(frames.grad), 0.0, 1.0)
    return slice_.with_frames(perturbed)


def perturb_middle_frame(slice_: VideoSlice, model: SteeringModel, epsilon: float, kind: str = "mse") -> np.ndarray:
    """The middle frame after one signed-gradient step restricted to its quad."""
    if epsilon < 0:
        raise ContractError(f"epsilon must be >= 0, got {epsilon}")
    check_geometry(model, slice_)
    mid = middle_index(slice_)
    before = model.checksum()
    tape = Tape()
    frames = tape.watch(Tensor._wrap(slice_.frames))
    loss = regression_loss(_predict(model, frames, "slice"), slice_.angles[-1:], kind)
    tape.backward(loss)
    _check_frozen(model, before, "physfgsm")
    assert frames.grad is not None
    frame = slice_.frames[mid]
    quad = slice_.quads[mid]
    h, w = frame.shape[1:]
    ys, xs = np.mgrid[0:h, 0:w]
    mask = quad.contains(xs.astype(np.float64), ys.astype(np.float64))
    step = np.where(mask[None], epsilon * np.sign(frames.grad[mid]), 0.0)
    return np.clip(frame + step, 0.0, 1.0)


def phys_fgsm(
    slice_: VideoSlice, model: SteeringModel, epsilon: float, sign_size: int = 32, kind: str = "mse"
) -> np.ndarray:
    """FGSM on the middle frame's sign region, rectified into a printable sign."""
    mid = middle_index(slice_)
    frame = perturb_middle_frame(slice_, model, epsilon, kind)
    return np.clip(rectify(frame, slice_.quads[mid], (sign_size, sign_size)), 0.0, 1.0)


def rp2_regression(
    slice_: VideoSlice,
    model: SteeringModel,
    cfg: AttackConfig,
    iterations: Optional[int] = None,
    history: Optional[list[float]] = None,
) -> np.ndarray:
    """Optimize sign pixels (through a sigmoid) against the middle frame alone.

    The middle frame is repeated to the model's window so the slice model sees
    a static scene. With `iterations=0` the initialization is returned as is.

    Raises:
        AttackError: On a non-finite loss.
    """
    steps = cfg.iterations if iterations is None else iterations
    if steps < 0:
        raise ContractError(f"iterations must be >= 0, got {steps}")
    check_geometry(model, slice_)
    mid = middle_index(slice_)
    init = rectified_patch(slice_, cfg.sign_size)
    if steps == 0:
        return init
    before = model.checksum()
    n = model.spec.window
    static = np.repeat(slice_.frames[mid : mid + 1], n, axis=0)
    quads = [slice_.quads[mid]] * n
    plans = plan_slice(static.shape[1:], init.shape, quads)
    if cfg.target == "ground_truth":
        reference = np.full(1, slice_.angles[mid])
    else:
        reference = _predict(model, static, "slice").data.copy()

    clipped = np.clip(init, LOGIT_CLIP, 1.0 - LOGIT_CLIP)
    logits = Tensor(np.log(clipped / (1.0 - clipped)), requires_grad=True)
    optimizer = Adam({"logits": logits}, cfg.lr_pixels)
    for it in range(steps):
        tape = Tape()
        optimizer.zero_grad()
        sign = tape.watch(logits).sigmoid()
        x = substitute_frames(static, sign, quads, plans)
        loss = adv_loss(reference, _predict(model, x, "slice"), cfg.beta, cfg.loss)
        if not np.isfinite(loss.item()):
            raise AttackError(f"RP2 loss became non-finite at step {it}")
        tape.backward(loss)
        optimizer.step()
        if history is not None:
            history.append(loss.item())
        if it % cfg.log_every == 0:
            logger.info(f"rp2[{slice_.meta.name}] step {it}: L_ADV {loss.item():.4f}")
    _check_frozen(model, before, "rp2")
    return 1.0 / (1.0 + np.exp(-logits.data))


def random_noise_sign(original_patch: np.ndarray, epsilon: float, seed: int) -> np.ndarray:
    """clamp(patch + U(-eps, eps), 0, 1)."""
    if epsilon < 0:
        raise ContractError(f"epsilon must be >= 0, got {epsilon}")
    noise = make_rng(seed, 31).uniform(-epsilon, epsilon, size=original_patch.shape)
    return np.clip(original_patch + noise, 0.0, 1.0)


def run_approach(
    approach: str,
    slice_: VideoSlice,
    model: SteeringModel,
    cfg: AttackConfig,
    original_sign: Optional[np.ndarray] = None,
) -> AttackArtifacts:
    """Run one approach on one slice and collect its artifacts."""
    if approach not in APPROACHES:
        raise ConfigurationError(f"Unknown approach '{approach}'\nChoose one of: {', '.join(APPROACHES)}")
    errors = cfg.validate()
    if errors:
        raise ConfigurationError("Attack configuration invalid:\n" + "\n".join(f"  - {e}" for e in errors))
    check_geometry(model, slice_)
    if original_sign is None:
        original_sign = rectified_patch(slice_, cfg.sign_size)
    c = slice_.geometry[0]
    logger.info(f"Running {approach} on '{slice_.meta.name}' (seed {cfg.seed})")

    if approach == "physgan":
        G = Generator(model.encoder_size, cfg.sign_size, c, cfg.seed)
        D = Discriminator(cfg.sign_size, c, cfg.seed)
        return train_physgan(slice_, model, G, D, cfg, original_sign)

    artifacts = AttackArtifacts(approach, slice_.meta.name, cfg.seed, cfg.to_dict())
    if approach == "fgsm":
        _finish(artifacts, model, slice_, fgsm_full_frame(slice_, model, cfg.epsilon, cfg.loss))
        return artifacts
    if approach == "original":
        _finish(artifacts, model, slice_, slice_)
        return artifacts

    if approach == "physfgsm":
        sign = phys_fgsm(slice_, model, cfg.epsilon, cfg.sign_size, cfg.loss)
    elif approach == "rp2":
        losses: list[float] = []
        sign = rp2_regression(slice_, model, cfg, history=losses)
        for it, value in enumerate(losses):
            artifacts.record(iteration=it, l_adv=value)
    else:
        sign = random_noise_sign(original_sign, cfg.epsilon, cfg.seed)
    artifacts.sign = sign
    _finish(artifacts, model, slice_, substitute_slice(slice_, sign))
    return artifacts


def adversarial_from_saved(approach: str, slice_: VideoSlice, run_dir: Path) -> VideoSlice:
    """Rebuild X_adv from a saved run directory."""
    if approach == "original":
        return slice_
    if approach == "fgsm":
        return load_slice(run_dir / "adversarial")
    return substitute_slice(slice_, load_sign(run_dir / "sign.png"))
