"""Command-line interface for physgan-lab."""

import argparse
import hashlib
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import pandas as pd

from . import __version__
from .attack import APPROACHES, AttackConfig, adversarial_from_saved, run_approach
from .config import ExperimentConfig, load_config
from .errors import (
    AttackError,
    ConfigurationError,
    IngestionError,
    PhysganLabError,
    SimulationError,
    TrainingError,
)
from .evaluation import ErrorSeries, closed_loop_sim, error_timeline, plot_timelines, summary_row, write_results
from .jobs import Job, run_jobs
from .nets import SteeringModel, train_steering
from .report import APPROACH_TITLES, write_report
from .scene import SceneConfig, VideoSlice, load_sign, load_slice, render_scene, resolve_sign_asset, save_slice

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "PHYSGAN_LAB_LOG_LEVEL"
LOG_FILE_NAME = "physgan-lab.log"
COMMANDS = ("gen-scenes", "train", "attack", "eval", "report")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_RUN = 4


def setup_logging(debug: bool = False, quiet: bool = False, log_file: Optional[Path] = None) -> None:
    """Set up logging configuration.

    Args:
        debug: Enable debug-level logging
        quiet: Suppress info-level logging
        log_file: Optional file that also receives every record, with timestamps
    """
    if quiet:
        level = logging.WARNING
    elif debug:
        level = logging.DEBUG
    else:
        name = os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
        level = getattr(logging, name, None) if name in ("DEBUG", "INFO", "WARNING", "ERROR") else None
        if level is None:
            level = logging.INFO
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    handlers[0].setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        handlers.append(file_handler)
    logging.basicConfig(level=level, handlers=handlers, force=True)


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{path}\n{hint}")
    return path


def scenes_dir(config: ExperimentConfig) -> Path:
    return config.output_dir / "scenes"


def model_path(config: ExperimentConfig, model: str) -> Path:
    return config.output_dir / "model" / model / "steering.pgt"


def run_dir(config: ExperimentConfig, model: str, approach: str, scene: str, seed: int) -> Path:
    return config.output_dir / "attacks" / model / approach / scene / f"seed_{seed}"


def directory_digest(path: Path) -> str:
    """SHA-256 over the names and bytes of every file in a directory, in name order."""
    digest = hashlib.sha256()
    for item in sorted(p for p in path.rglob("*") if p.is_file()):
        digest.update(item.relative_to(path).as_posix().encode())
        digest.update(item.read_bytes())
    return digest.hexdigest()


# ---- jobs (module level so a process pool can pickle them) ----------------


def _render_job(scene: dict[str, Any], asset: str, out: str) -> dict[str, Any]:
    cfg = SceneConfig.from_dict(scene)
    path = save_slice(render_scene(cfg, resolve_sign_asset(asset)), Path(out))
    return {"name": cfg.name, "lane": cfg.lane, "frames": cfg.frames, "sha256": directory_digest(path)}


def _attack_job(
    approach: str, checkpoint: str, slice_dir: str, attack: dict[str, Any], asset: str, out: str
) -> Optional[str]:
    cfg = AttackConfig.from_dict(attack)
    model = SteeringModel.load(Path(checkpoint))
    slice_ = load_slice(Path(slice_dir))
    try:
        artifacts = run_approach(approach, slice_, model, cfg, resolve_sign_asset(asset, cfg.sign_size))
    except AttackError as e:
        if e.partial is not None:
            e.partial.save(Path(out))
        return str(e)
    artifacts.save(Path(out))
    return None


def _eval_job(
    model_name: str,
    approach: str,
    checkpoint: str,
    slice_dir: str,
    attack_dir: str,
    seed: int,
    reference: str,
    closed_loop: Optional[dict[str, Any]],
) -> tuple[ErrorSeries, dict[str, Any]]:
    model = SteeringModel.load(Path(checkpoint))
    original = load_slice(Path(slice_dir))
    adversarial = adversarial_from_saved(approach, original, Path(attack_dir))
    series = error_timeline(
        model, original, adversarial, reference=reference, approach=approach, seed=seed, model_name=model_name
    )
    sim = None
    if closed_loop is not None:
        scene_cfg = SceneConfig.from_dict(closed_loop["scene"])
        if approach == "original":
            sign = resolve_sign_asset(closed_loop["asset"])
        else:
            sign = load_sign(Path(attack_dir) / "sign.png")
        sim = closed_loop_sim(model, scene_cfg, sign, closed_loop["sim"])
    return series, summary_row(series, sim)


# ---- commands ------------------------------------------------------------


def cmd_gen_scenes(config: ExperimentConfig, out_dir: Optional[Path] = None) -> Path:
    """Render every configured scene to a slice directory and write manifest.csv.

    Returns:
        Path of the manifest
    """
    out_dir = out_dir or scenes_dir(config)
    if not config.scenes:
        raise ConfigurationError("No scenes configured\nAdd at least one [[scenes]] table.")
    jobs = [
        Job((i,), _render_job, (scene.to_dict(), config.sign_asset_path(scene), str(out_dir / scene.name)))
        for i, scene in enumerate(config.scenes)
    ]
    rows = [row for _, row in run_jobs(jobs, config.experiment.jobs)]
    manifest = out_dir / "manifest.csv"
    pd.DataFrame(rows, columns=["name", "lane", "frames", "sha256"]).to_csv(manifest, index=False)
    logger.info(f"Rendered {len(rows)} scenes to {out_dir}")
    return manifest


def load_scenes(config: ExperimentConfig, names: Optional[Sequence[str]] = None) -> list[VideoSlice]:
    root = scenes_dir(config)
    slices = []
    for name in names or [s.name for s in config.scenes]:
        path = _require(root / name, "Run 'physgan-lab gen-scenes' first.")
        slices.append(load_slice(path))
    return slices


def cmd_train(config: ExperimentConfig) -> list[Path]:
    """Train every configured steering model on the rendered scenes; one model/<name>/steering.pgt each."""
    dataset = load_scenes(config, config.train.scenes_for_training or None)
    paths = []
    for spec in config.models:
        model = SteeringModel(spec)
        result = train_steering(model, dataset, config.train, model_path(config, spec.name).parent)
        val = result.val_mse[result.best_epoch] if result.val_mse else float("nan")
        logger.info(f"Model '{spec.name}': best epoch {result.best_epoch}, validation MSE {val:.4f} deg^2")
        paths.append(model_path(config, spec.name))
    return paths


def cmd_attack(config: ExperimentConfig, approaches: Sequence[str]) -> list[Path]:
    """Run every (model, approach, scene, seed) attack and save its artifacts.

    Raises:
        AttackError: After all runs finished, if any of them aborted.
    """
    checkpoints = [_require(model_path(config, name), "Run 'physgan-lab train' first.") for name in config.model_names]
    for scene in config.scenes:
        _require(scenes_dir(config) / scene.name, "Run 'physgan-lab gen-scenes' first.")
    jobs = []
    for m, (name, checkpoint) in enumerate(zip(config.model_names, checkpoints)):
        for a, approach in enumerate(approaches):
            for s, scene in enumerate(config.scenes):
                for seed in config.seeds:
                    out = run_dir(config, name, approach, scene.name, seed)
                    args = (
                        approach,
                        str(checkpoint),
                        str(scenes_dir(config) / scene.name),
                        config.attack_for(approach, seed).to_dict(),
                        config.sign_asset_path(scene),
                        str(out),
                    )
                    jobs.append(Job((m, a, s, seed), _attack_job, args))
    results = run_jobs(jobs, config.experiment.jobs)
    outputs = {job.key: job.args[5] for job in jobs}
    failures = [(outputs[key], error) for key, error in results if error]
    for out, error in failures:
        logger.error(f"Attack run {out} failed: {error}")
    if failures:
        raise AttackError(f"{len(failures)} of {len(jobs)} attack runs aborted; partial artifacts were saved")
    logger.info(f"Completed {len(jobs)} attack runs")
    return [Path(job.args[5]) for job in jobs]


def cmd_eval(config: ExperimentConfig, approaches: Sequence[str]) -> tuple[Path, Path]:
    """Per-frame errors, summaries and closed-loop runs for every saved attack of every model."""
    checkpoints = [_require(model_path(config, name), "Run 'physgan-lab train' first.") for name in config.model_names]
    closed_loop = set(config.closed_loop_scenes)
    jobs = []
    for m, (name, checkpoint) in enumerate(zip(config.model_names, checkpoints)):
        for a, approach in enumerate(approaches):
            for s, scene in enumerate(config.scenes):
                for seed in config.seeds:
                    attack_dir = run_dir(config, name, approach, scene.name, seed)
                    if approach != "original":
                        _require(attack_dir, f"Run 'physgan-lab attack --approach {approach}' first.")
                    sim = None
                    if scene.name in closed_loop and approach != "fgsm":
                        sim = {
                            "scene": scene.to_dict(),
                            "asset": config.sign_asset_path(scene),
                            "sim": config.evaluation.sim,
                        }
                    args = (
                        name,
                        approach,
                        str(checkpoint),
                        str(_require(scenes_dir(config) / scene.name, "Run 'physgan-lab gen-scenes' first.")),
                        str(attack_dir),
                        seed,
                        config.evaluation.reference,
                        sim,
                    )
                    jobs.append(Job((m, a, s, seed), _eval_job, args))
    results = [result for _, result in run_jobs(jobs, config.experiment.jobs)]
    out_dir = config.output_dir / "eval"
    series = [r[0] for r in results]
    paths = write_results(out_dir, series, [r[1] for r in results], APPROACHES)
    plot_timelines(series, out_dir / "timelines", APPROACH_TITLES)
    return paths


def cmd_report(config: ExperimentConfig) -> tuple[Path, Path]:
    """Render report.md and report.csv from eval/summary.csv."""
    meta = {
        "models": ", ".join(config.model_names),
        "seeds": ", ".join(str(s) for s in config.seeds),
        "reference": config.evaluation.reference,
        "scenes": ", ".join(s.name for s in config.scenes),
    }
    return write_report(config.output_dir / "eval" / "summary.csv", config.output_dir, config.experiment.name, meta)



def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="physgan-lab",
        description="Desk-scale laboratory for physical adversarial signs against steering models",
        epilog="""
Examples:
  physgan-lab gen-scenes --config configs/default.toml
  physgan-lab train --config configs/default.toml
  physgan-lab attack --config configs/default.toml --approach physgan --seed 3
  physgan-lab eval --config configs/default.toml --jobs 4
  physgan-lab report --config configs/default.toml
        """,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=COMMANDS, help="Pipeline stage to run")
    parser.add_argument(
        "--config",
        "-c",
        type=Path,
        default=Path("physgan-lab.toml"),
        help="Path to the experiment TOML file (default: physgan-lab.toml)",
    )
    parser.add_argument(
        "--approach",
        "-a",
        action="append",
        choices=APPROACHES,
        help="Approach to attack or evaluate; repeatable (default: evaluation.approaches)",
    )
    parser.add_argument("--seed", type=int, help="Override experiment.seed")
    parser.add_argument("--out", type=Path, help="Override experiment.output_dir")
    parser.add_argument("--jobs", "-j", type=int, help="Override experiment.jobs")
    parser.add_argument("--debug", action="store_true", help="Enable debug logging")
    parser.add_argument(
        "--quiet",
        "-q",
        action="store_true",
        help="Suppress info-level logging (warnings and errors only)",
    )
    return parser


def run_command(command: str, config: ExperimentConfig, approaches: Sequence[str]) -> None:
    if command == "gen-scenes":
        cmd_gen_scenes(config)
    elif command == "train":
        cmd_train(config)
    elif command == "attack":
        cmd_attack(config, approaches)
    elif command == "eval":
        cmd_eval(config, approaches)
    else:
        cmd_report(config)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one pipeline stage.

    Returns:
        Exit code (0=success, 1=config error, 2=usage error, 3=missing prerequisite, 4=run failure)
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    setup_logging(debug=args.debug, quiet=args.quiet)
    if args.seed is not None and args.seed < 0:
        logger.error(f"--seed must be >= 0, got {args.seed}")
        return EXIT_USAGE
    if args.jobs is not None and args.jobs < 1:
        logger.error(f"--jobs must be >= 1, got {args.jobs}")
        return EXIT_USAGE

    try:
        overrides = {"seed": args.seed, "output_dir": str(args.out.resolve()) if args.out else None, "jobs": args.jobs}
        config = load_config(args.config, overrides)
        out_dir = config.output_dir
        setup_logging(debug=args.debug, quiet=args.quiet, log_file=out_dir / LOG_FILE_NAME)
        config.write_snapshot(out_dir)
        approaches = args.approach or config.evaluation.approaches
        experiment = config.experiment
        logger.info(f"Starting {args.command} for experiment '{experiment.name}' (seed {experiment.seed})")
        run_command(args.command, config, list(dict.fromkeys(approaches)))
        logger.info(f"✓ {args.command} completed successfully")
        return EXIT_OK

    except ConfigurationError as e:
        logger.error(f"Configuration error: {e}")
        logger.debug("Check the experiment TOML file against the documented sections", exc_info=True)
        return EXIT_CONFIG
    except (FileNotFoundError, IngestionError) as e:
        logger.error(f"Missing prerequisite: {e}")
        logger.debug("Full error details:", exc_info=True)
        return EXIT_MISSING
    except TrainingError as e:
        logger.error(f"Training failed: {e}")
        if e.checkpoint is not None:
            logger.error(f"Last finite parameters saved to {e.checkpoint}")
        return EXIT_RUN
    except (AttackError, SimulationError) as e:
        logger.error(f"Run failed: {e}")
        logger.debug("Full error details:", exc_info=True)
        return EXIT_RUN
    except (PhysganLabError, OSError) as e:
        logger.error(f"Run failed: {e}")
        logger.debug("Full error details:", exc_info=True)
        return EXIT_RUN
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        logger.debug("Full error details:", exc_info=True)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
