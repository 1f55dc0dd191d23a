"""Comparison report rendering from evaluation summaries."""

import logging
import math
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import pandas as pd
from jinja2 import Environment, PackageLoader, StrictUndefined

from .attack import APPROACHES

logger = logging.getLogger(__name__)

APPROACH_TITLES = {
    "physgan": "PhysGAN",
    "fgsm": "FGSM",
    "physfgsm": "PhysFGSM",
    "rp2": "RP2",
    "noise": "Random Noise",
    "original": "Original Sign",
}
REPORT_COLUMNS = ["model", "approach", "scene", "seeds", "mse", "msae", "time_to_curb_s", "distance_to_center_m"]
METRICS = ["mse", "msae", "time_to_curb_s", "distance_to_center_m"]


def fmt_number(value: Union[float, int, None], digits: int = 2) -> str:
    """Fixed-point text, or "n/a" for missing values.

    Args:
        value: Number to format
        digits: Digits after the decimal point

    Returns:
        Formatted number
    """
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    return f"{value:.{digits}f}"


def fmt_cell(row: dict[str, Any]) -> str:
    """The "MSE / MSAE" cell of one aggregated row."""
    return f"{fmt_number(row.get('mse'))} / {fmt_number(row.get('msae'))}"


def approach_title(approach: str) -> str:
    return APPROACH_TITLES.get(approach, approach)


FILTERS = {
    "number": fmt_number,
    "cell": fmt_cell,
    "approach_title": approach_title,
}


def aggregate(summary: pd.DataFrame, order: Sequence[str] = APPROACHES) -> pd.DataFrame:
    """Seed-averaged metrics per (model, approach, scene), plus one "all" row per (model, approach).

    Time-to-curb averages only over seeds that reached the curb, so a run that
    never reaches it contributes nothing rather than a zero. Summaries without
    a model column are treated as one unnamed model.
    """
    missing = [c for c in ("approach", "scene", "seed", *METRICS) if c not in summary.columns]
    if missing:
        raise ValueError(f"summary is missing columns: {', '.join(missing)}")
    if "model" in summary.columns:
        summary = summary.assign(model=summary["model"].fillna("").astype(str))
    else:
        summary = summary.assign(model="")
    grouped = summary.groupby(["model", "approach", "scene"], sort=False)
    per_scene = grouped[METRICS].mean().reset_index()
    per_scene.insert(3, "seeds", grouped["seed"].nunique().to_numpy())

    overall = summary.groupby(["model", "approach"], sort=False)
    totals = overall[METRICS].mean().reset_index()
    totals.insert(2, "scene", "all")
    totals.insert(3, "seeds", overall["seed"].nunique().to_numpy())

    rank = {name: i for i, name in enumerate(order)}
    frame = pd.concat([per_scene, totals], ignore_index=True)
    frame = frame.assign(
        _rank=frame["approach"].map(lambda a: rank.get(a, len(rank))),
        _all=frame["scene"].eq("all"),
    )
    frame = frame.sort_values(["model", "_rank", "_all", "scene"], kind="mergesort").drop(columns=["_rank", "_all"])
    return frame[REPORT_COLUMNS].reset_index(drop=True)


def render_report(
    table: pd.DataFrame, title: str = "physgan-lab", meta: Optional[dict[str, Any]] = None
) -> str:
    """Markdown comparison tables, one section per model; approaches as columns, scenes as rows."""
    env = Environment(
        loader=PackageLoader("physgan_lab", "templates"),
        undefined=StrictUndefined,
        keep_trailing_newline=True,
        trim_blocks=True,
        lstrip_blocks=True,
    )
    env.filters.update(FILTERS)
    if "model" not in table.columns:
        table = table.assign(model="")
    table = table.assign(model=table["model"].fillna("").astype(str))
    rank = {name: i for i, name in enumerate(APPROACHES)}
    approaches = sorted(dict.fromkeys(table["approach"]), key=lambda a: rank.get(a, len(rank)))
    sections = []
    for name in dict.fromkeys(table["model"]):
        rows = table[table["model"] == name]
        cells = {(row["approach"], row["scene"]): row for row in rows.to_dict("records")}
        present = [a for a in approaches if a in set(rows["approach"])]
        sections.append(
            {
                "name": name,
                "approaches": present,
                "scenes": [s for s in dict.fromkeys(rows["scene"]) if s != "all"] + ["all"],
                "cells": cells,
                "totals": [cells[(a, "all")] for a in present if (a, "all") in cells],
            }
        )
    overview = {(s["name"], row["approach"]): row for s in sections for row in s["totals"]}
    template = env.get_template("report.md.j2")
    return template.render(
        title=title,
        meta=meta or {},
        approaches=approaches,
        models=sections,
        overview=overview,
    )


def write_report(
    summary_path: Path, out_dir: Path, title: str = "physgan-lab", meta: Optional[dict[str, Any]] = None
) -> tuple[Path, Path]:
    """Write report.md and report.csv next to each other.

    Raises:
        FileNotFoundError: If the evaluation summary does not exist.
    """
    if not summary_path.exists():
        raise FileNotFoundError(f"Evaluation summary not found: {summary_path}\nRun 'physgan-lab eval' first.")
    summary = pd.read_csv(summary_path)
    table = aggregate(summary)
    out_dir.mkdir(parents=True, exist_ok=True)
    md_path = out_dir / "report.md"
    csv_path = out_dir / "report.csv"
    md_path.write_text(render_report(table, title, meta), encoding="utf-8")
    table.to_csv(csv_path, index=False, float_format="%.17g")
    logger.info(f"Wrote {md_path} and {csv_path}")
    return md_path, csv_path
