"""
Shared test fixtures and utilities for physgan_lab unit tests.

Everything here uses tiny geometries (16x16 frames, window 4, 8x8 signs) so
the full unit suite stays fast on a CPU.
"""

from pathlib import Path

import numpy as np
import pytest
import tomli_w

from physgan_lab.attack import AttackConfig
from physgan_lab.nets import ModelSpec, SteeringModel
from physgan_lab.scene import SceneConfig, builtin_sign, render_scene, save_slice
from physgan_lab.tensor import Tape, Tensor

TINY_FRAMES = 4
TINY_SIZE = 16
TINY_SIGN = 8
DEFAULT_CONFIG = Path(__file__).resolve().parents[2] / "configs" / "default.toml"


def numeric_grad(fn, array: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """
    Central finite-difference gradient of a scalar function of one array.

    Args:
        fn: Callable mapping an array to a float.
        array: Point of evaluation; not modified.
        eps: Step size.

    Returns:
        np.ndarray: Gradient estimate with the shape of `array`.
    """
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.astype(np.float64).copy().reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = fn(flat.reshape(array.shape))
        flat[i] = orig - eps
        minus = fn(flat.reshape(array.shape))
        flat[i] = orig
        grad.reshape(-1)[i] = (plus - minus) / (2 * eps)
    return grad


def tape_grad(fn, array: np.ndarray) -> np.ndarray:
    """Gradient of `fn(Tensor) -> scalar Tensor` computed through a Tape."""
    x = Tensor(array)
    tape = Tape()
    out = fn(tape.watch(x))
    tape.backward(out)
    return x.grad


def assert_grad_close(fn, array: np.ndarray, rtol: float = 1e-4, atol: float = 1e-7) -> None:
    """Compare tape and finite-difference gradients of `fn` at `array`."""
    analytic = tape_grad(fn, array)
    numeric = numeric_grad(lambda a: fn(Tensor(a)).item(), array)
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


def assert_param_grads_close(params: dict, name: str, loss, rng, count: int = 40, eps: float = 1e-6) -> int:
    """
    Check the tape gradient of one parameter at randomly chosen entries.

    Args:
        params: A network's `parameters()` dict.
        name: The parameter to check.
        loss: Callable mapping an optional Tape to a scalar Tensor.
        rng: Chooses the entries.
        count: Entries to check, capped at the parameter size.
        eps: Central-difference step.

    Returns:
        int: Number of entries checked.
    """
    tape = Tape()
    tape.backward(loss(tape))
    param = params[name]
    analytic = param.grad.reshape(-1).copy()
    picks = rng.choice(param.size, size=min(count, param.size), replace=False)
    for k in picks:
        orig = param.values[k]
        param.values[k] = orig + eps
        plus = loss(None).item()
        param.values[k] = orig - eps
        minus = loss(None).item()
        param.values[k] = orig
        assert analytic[k] == pytest.approx((plus - minus) / (2 * eps), rel=1e-4, abs=1e-6), f"{name}[{k}]"
    return len(picks)


def tiny_scene_config(**overrides) -> SceneConfig:
    """A 16x16, 4-frame scene whose billboard stays inside every frame."""
    values = dict(
        name="tiny",
        frames=TINY_FRAMES,
        image_size=(TINY_SIZE, TINY_SIZE),
        focal_length_px=12.0,
        speed_mps=4.0,
        initial_distance_m=8.0,
        lateral_offset_m=2.0,
        billboard_size_m=(2.0, 2.0),
    )
    values.update(overrides)
    return SceneConfig(**values)


def tiny_model_spec(**overrides) -> ModelSpec:
    values = dict(
        window=TINY_FRAMES,
        channels=3,
        height=TINY_SIZE,
        width=TINY_SIZE,
        conv_channels=(2, 3),
        kernels=((3, 3, 3), (3, 3, 3)),
        strides=((1, 2, 2), (2, 2, 2)),
        padding=((1, 1, 1), (1, 1, 1)),
        dense=4,
        seed=0,
    )
    values.update(overrides)
    return ModelSpec(**values)


def tiny_config_data(**sections) -> dict:
    """A complete two-scene experiment on the tiny geometry; `sections` replace whole tables."""
    data = {
        "schema_version": 1,
        "experiment": {"name": "tiny", "seed": 0, "output_dir": "out", "seeds_per_run": 1},
        "scenes": [
            tiny_scene_config(name="tiny_a", texture_seed=0).to_dict(),
            tiny_scene_config(name="tiny_b", texture_seed=1, sign_asset="arches").to_dict(),
        ],
        "model": tiny_model_spec().to_dict(),
        "train": {"epochs": 1, "batch_size": 4, "val_fraction": 0.5, "augment_strength": 0.0},
        "attack": {"iterations": 2, "sign_size": TINY_SIGN, "log_every": 1},
        "evaluation": {"closed_loop_scenes": ["tiny_a"], "horizon_s": 0.5},
    }
    data.update(sections)
    return data


def write_config(path: Path, data: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        tomli_w.dump(data, f)
    return path


@pytest.fixture
def rng():
    """Seeded numpy generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def scene_cfg():
    """Tiny straight-road scene configuration."""
    return tiny_scene_config()


@pytest.fixture
def tiny_slice(scene_cfg):
    """Rendered 4-frame 16x16 slice with the built-in ring sign."""
    return render_scene(scene_cfg, builtin_sign("ring", TINY_SIGN))


@pytest.fixture
def tiny_model():
    """Untrained steering model matching the tiny slice geometry."""
    return SteeringModel(tiny_model_spec())


@pytest.fixture
def attack_cfg():
    """Short, fast attack configuration for the tiny geometry."""
    return AttackConfig(iterations=3, sign_size=TINY_SIGN, log_every=1, seed=0)


@pytest.fixture
def slice_dir(tmp_path, tiny_slice) -> Path:
    """The tiny slice saved to disk."""
    return save_slice(tiny_slice, tmp_path / "tiny")
