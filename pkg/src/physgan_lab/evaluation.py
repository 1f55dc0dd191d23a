"""Steering-error metrics, per-frame timelines and a closed-loop driving proxy."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .errors import ConfigurationError, ContractError, DimensionError, NumericError, SimulationError  # noqa: E402
from .nets import SteeringModel, sliding_predictions  # noqa: E402
from .scene import Pose, SceneConfig, ValueNoise, VideoSlice, ground_truth_angle, render_view  # noqa: E402
from .tensor import Tensor  # noqa: E402

logger = logging.getLogger(__name__)

REFERENCES = ("ground_truth", "original")
RESULT_COLUMNS = ["model", "approach", "scene", "seed", "frame", "error_deg"]
SUMMARY_COLUMNS = ["model", "approach", "scene", "seed", "mse", "msae", "time_to_curb_s", "distance_to_center_m"]
TRAJECTORY_COLUMNS = ["t", "s_m", "lateral_m", "heading_rad", "steering_deg"]


@dataclass(eq=False)
class ErrorSeries:
    """Signed per-frame steering errors in degrees with their provenance."""

    errors: np.ndarray
    frames: Optional[np.ndarray] = None
    approach: str = ""
    scene: str = ""
    seed: int = 0
    model: str = ""

    def __post_init__(self) -> None:
        self.errors = np.asarray(self.errors, dtype=np.float64).reshape(-1)
        if self.frames is None:
            self.frames = np.arange(self.errors.size)
        self.frames = np.asarray(self.frames, dtype=np.int64).reshape(-1)
        if self.frames.shape != self.errors.shape:
            raise DimensionError(f"{self.errors.size} errors but {self.frames.size} frame indices")
        if not np.all(np.isfinite(self.errors)):
            raise NumericError(f"Error series {self.label} contains non-finite values")

    def __len__(self) -> int:
        return int(self.errors.size)

    @property
    def label(self) -> str:
        label = f"{self.approach}/{self.scene}/seed_{self.seed}"
        return f"{self.model}/{label}" if self.model else label


SeriesLike = Union[ErrorSeries, Sequence[float], np.ndarray]


def _errors(series: SeriesLike) -> np.ndarray:
    values = series.errors if isinstance(series, ErrorSeries) else np.asarray(series, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ContractError("Metrics need a non-empty error series")
    return values


def steering_mse(series: SeriesLike) -> float:
    """Mean of squared errors, deg^2."""
    values = _errors(series)
    return float(np.mean(values**2))


def msae(series: SeriesLike) -> float:
    """Maximum absolute error, deg."""
    return float(np.max(np.abs(_errors(series))))


def late_and_early_means(series: SeriesLike) -> tuple[float, float]:
    """Mean |error| over the second half and over the first half of the frames."""
    values = np.abs(_errors(series))
    half = values.size // 2
    early = values[:half] if half else values
    return float(values[half:].mean()), float(early.mean())


def error_timeline(
    model: SteeringModel,
    slice_orig: VideoSlice,
    slice_adv: VideoSlice,
    reference: str = "original",
    approach: str = "",
    seed: int = 0,
    model_name: str = "",
) -> ErrorSeries:
    """Per-frame f(window of X_adv) minus f(window of X_orig) or minus the ground truth."""
    if reference not in REFERENCES:
        raise ConfigurationError(f"reference must be one of {REFERENCES}, got '{reference}'")
    if slice_orig.frames.shape != slice_adv.frames.shape:
        raise DimensionError(
            f"Original and adversarial slices differ in geometry: "
            f"{slice_orig.frames.shape} vs {slice_adv.frames.shape}"
        )
    adv = sliding_predictions(model, slice_adv.frames)
    base = slice_orig.angles if reference == "ground_truth" else sliding_predictions(model, slice_orig.frames)
    return ErrorSeries(adv - base, approach=approach, scene=slice_orig.meta.name, seed=seed, model=model_name)


# ---- closed loop ---------------------------------------------------------


@dataclass
class SimConfig:
    """Closed-loop dynamics parameters; speed None means the scene speed."""

    curb_offset_m: float = 1.5
    horizon_s: float = 3.0
    speed_mps: Optional[float] = None
    wheelbase_m: float = 2.5

    def validate(self) -> list[str]:
        errors = []
        if self.curb_offset_m <= 0:
            errors.append(f"evaluation.curb_offset_m must be > 0, got {self.curb_offset_m}")
        if not (np.isfinite(self.horizon_s) and self.horizon_s > 0):
            errors.append(f"evaluation.horizon_s must be finite and > 0, got {self.horizon_s}")
        if self.speed_mps is not None and self.speed_mps <= 0:
            errors.append(f"evaluation.sim_speed_mps must be > 0, got {self.speed_mps}")
        if self.wheelbase_m <= 0:
            errors.append(f"evaluation.wheelbase_m must be > 0, got {self.wheelbase_m}")
        return errors


@dataclass
class SimState:
    lateral: float = 0.0
    heading: float = 0.0
    speed: float = 1.0
    time: float = 0.0
    s: float = 0.0


@dataclass
class SimResult:
    time_to_curb: Optional[float]
    distance_to_center: float
    trajectory: pd.DataFrame


def step_state(state: SimState, steering_deg: float, dt: float, wheelbase: float, road_deg: float = 0.0) -> SimState:
    """One explicit Euler step of the kinematic bicycle relative to the lane.

    Lateral offset and heading are measured from the lane centre, and the
    heading rate is driven by the steering in excess of `road_deg`, the angle
    that follows the road. Zero steering holds the lane only on a straight; on
    a curve it drifts towards the outside.
    """
    heading = state.heading + (state.speed * dt / wheelbase) * (
        np.tan(np.radians(steering_deg)) - np.tan(np.radians(road_deg))
    )
    lateral = state.lateral + state.speed * dt * np.sin(heading)
    s = state.s + state.speed * dt * np.cos(heading)
    return SimState(float(lateral), float(heading), state.speed, state.time + dt, float(s))


def closed_loop_sim(model: SteeringModel, scene_cfg: SceneConfig, sign: np.ndarray, sim: SimConfig) -> SimResult:
    """Drive the scene with the model in the loop.

    Every step renders the view from the current pose with `sign` on the
    billboard, predicts the steering angle from the window of the latest
    frames (leading frames repeat the first one) and integrates the bicycle
    model at the scene frame rate.

    Raises:
        SimulationError: If the state becomes non-finite; carries the trajectory so far.
    """
    errors = sim.validate()
    if errors:
        raise ConfigurationError("Simulation configuration invalid:\n" + "\n".join(f"  - {e}" for e in errors))
    dt = 1.0 / scene_cfg.frame_rate_hz
    speed = sim.speed_mps if sim.speed_mps is not None else scene_cfg.speed_mps
    road = ground_truth_angle(scene_cfg)
    steps = int(np.floor(sim.horizon_s / dt + 1e-9))
    noise = ValueNoise(scene_cfg.texture_seed)
    window = model.spec.window

    state = SimState(speed=speed)
    rows: list[list[float]] = [[0.0, 0.0, 0.0, 0.0, np.nan]]
    frames: list[np.ndarray] = []
    time_to_curb: Optional[float] = None
    for _ in range(steps):
        frame, _quad = render_view(scene_cfg, sign, Pose(state.s, state.lateral, state.heading), noise)
        frames.append(frame)
        recent = frames[-window:]
        recent = [recent[0]] * (window - len(recent)) + recent
        batch = Tensor._wrap(np.stack(recent).transpose(1, 0, 2, 3)[None])
        steering = model(batch).item()
        state = step_state(state, steering, dt, sim.wheelbase_m, road)
        rows.append([state.time, state.s, state.lateral, state.heading, steering])
        if not all(np.isfinite(v) for v in (state.lateral, state.heading, state.s, steering)):
            raise SimulationError(
                f"Simulation state became non-finite at t={state.time:.2f}s",
                trajectory=pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS),
            )
        if time_to_curb is None and abs(state.lateral) >= sim.curb_offset_m:
            time_to_curb = state.time
            logger.info(f"Vehicle reached the curb after {time_to_curb:.2f}s in scene '{scene_cfg.name}'")
    trajectory = pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)
    return SimResult(time_to_curb, float(trajectory["lateral_m"].abs().max()), trajectory)


# ---- result files --------------------------------------------------------


def results_frame(series: Sequence[ErrorSeries]) -> pd.DataFrame:
    rows = [
        [s.model, s.approach, s.scene, s.seed, int(frame), float(err)]
        for s in series
        for frame, err in zip(s.frames, s.errors)
    ]
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def summary_row(series: ErrorSeries, sim: Optional[SimResult] = None) -> dict[str, Any]:
    return {
        "model": series.model,
        "approach": series.approach,
        "scene": series.scene,
        "seed": series.seed,
        "mse": steering_mse(series),
        "msae": msae(series),
        "time_to_curb_s": np.nan if sim is None or sim.time_to_curb is None else sim.time_to_curb,
        "distance_to_center_m": np.nan if sim is None else sim.distance_to_center,
    }


def sort_results(frame: pd.DataFrame, order: Sequence[str]) -> pd.DataFrame:
    """Model name, then approaches in report order, then scene and seed."""
    rank = {name: i for i, name in enumerate(order)}
    keyed = frame.assign(_rank=frame["approach"].map(lambda a: rank.get(a, len(rank))))
    keys = ["model", "_rank", "scene", "seed"] + (["frame"] if "frame" in frame.columns else [])
    return keyed.sort_values(keys, kind="mergesort").drop(columns="_rank").reset_index(drop=True)


def write_results(
    out_dir: Path, series: Sequence[ErrorSeries], summary: Sequence[dict[str, Any]], order: Sequence[str]
) -> tuple[Path, Path]:
    """results.csv and summary.csv, rows in a fixed order with full float precision."""
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "results.csv"
    summary_path = out_dir / "summary.csv"
    sort_results(results_frame(series), order).to_csv(results_path, index=False, float_format="%.17g")
    sort_results(pd.DataFrame(list(summary), columns=SUMMARY_COLUMNS), order).to_csv(
        summary_path, index=False, float_format="%.17g"
    )
    logger.info(f"Wrote {results_path} and {summary_path}")
    return results_path, summary_path


def plot_timelines(series: Sequence[ErrorSeries], out_dir: Path, titles: Optional[dict[str, str]] = None) -> list[Path]:
    """One error-versus-frame figure per (model, scene), one seed-averaged line per approach.

    Figures of named models go to a subdirectory per model.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    titles = titles or {}
    paths = []
    for model, scene in sorted({(s.model, s.scene) for s in series}):
        group = [s for s in series if s.model == model and s.scene == scene]
        target = out_dir / model if model else out_dir
        target.mkdir(parents=True, exist_ok=True)
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for approach in sorted({s.approach for s in group}):
            members = [s for s in group if s.approach == approach]
            mean = np.mean([s.errors for s in members], axis=0)
            ax.plot(members[0].frames + 1, mean, marker="o", markersize=3, label=titles.get(approach, approach))
        ax.axhline(0.0, color="grey", linewidth=0.8)
        ax.set_xlabel("frame")
        ax.set_ylabel("steering angle error (deg)")
        ax.set_title(f"{model}: {scene}" if model else scene)
        ax.legend(fontsize="small")
        fig.tight_layout()
        path = target / f"{scene}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths


