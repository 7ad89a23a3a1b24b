"""Report emission: CSV and JSON data files plus SVG triangle and bar renderings."""

import json
import logging
from collections.abc import Iterable
from pathlib import Path

import numpy as np
import pandas as pd
from matplotlib import colormaps
from matplotlib.cm import ScalarMappable
from matplotlib.colors import Normalize
from matplotlib.figure import Figure
from matplotlib.patches import RegularPolygon
from matplotlib.transforms import Affine2D

from .constants import MARBLES_PER_URN
from .evaluation import EnsembleStats, EvalReport, GridEvalReport, TriangleGrid
from .urns import Color

logger = logging.getLogger(__name__)

FORMATS = ("csv", "json", "svg")
COLORMAP = "RdBu_r"

# (fraction of the third color, fraction of the first color) -> plane; first color at the top
TERNARY = Affine2D.from_values(1.0, 0, 0.5, np.sqrt(3) / 2.0, 0, 0)
CELL_RADIUS = 1.0 / (MARBLES_PER_URN * np.sqrt(3))


def _config_columns(colors: Iterable[Color]) -> list[str]:
    return [f"config_{c.initial}" for c in colors]


def grid_frame(grid: TriangleGrid) -> pd.DataFrame:
    """One row per cell: composition counts, timestep, the value and (for rates) the sample count."""
    frame = pd.DataFrame(grid.configs, columns=_config_columns(grid.colors))
    frame["timestep"] = pd.array([grid.timestep] * len(frame), dtype="Int64")
    frame["rate" if grid.kind == "rate" else "value"] = grid.values
    if grid.counts is not None:
        frame["n"] = grid.counts
    return frame


def write_csv(grids: list[TriangleGrid], path: str | Path) -> Path:
    path = Path(path)
    pd.concat([grid_frame(g) for g in grids], ignore_index=True).to_csv(path, index=False)
    return path


def parse_csv(path: str | Path) -> list[TriangleGrid]:
    """Grids stored in an emitted CSV, one per timestep in file order."""
    frame = pd.read_csv(path, dtype={"timestep": "Int64"}, float_precision="round_trip")
    config_columns = [c for c in frame.columns if c.startswith("config_")]
    if len(config_columns) != 3:
        raise ValueError(f"{path} has {len(config_columns)} config columns, expected 3")
    colors = tuple(Color.parse(c.removeprefix("config_")) for c in config_columns)
    kind = "rate" if "rate" in frame.columns else "value"

    grids = []
    for timestep, rows in frame.groupby("timestep", dropna=False, sort=False):
        rows = rows.sort_values(config_columns)
        grids.append(
            TriangleGrid(
                colors=colors,
                values=rows[kind].to_numpy(dtype=np.float64),
                counts=rows["n"].to_numpy() if "n" in rows.columns else None,
                timestep=None if pd.isna(timestep) else int(timestep),
                kind=kind,
            )
        )
    return grids


def grid_to_dict(grid: TriangleGrid) -> dict:
    cells = []
    for i, config in enumerate(grid.configs):
        cell = {"config": {c.value: n for c, n in zip(grid.colors, config)}, grid.kind: float(grid.values[i])}
        if grid.counts is not None:
            cell["n"] = int(grid.counts[i])
        cells.append(cell)
    return {"colors": [c.value for c in grid.colors], "timestep": grid.timestep, "kind": grid.kind, "cells": cells}


def _write_json(payload: dict, path: Path) -> Path:
    path.write_text(json.dumps(payload, indent=2))
    return path


def project(configs: Iterable[tuple[int, int, int]]) -> np.ndarray:
    """Barycentric plane coordinates of compositions."""
    counts = np.asarray(list(configs), dtype=np.float64) / MARBLES_PER_URN
    return TERNARY.transform(counts[:, [2, 0]])


def render_triangle(grid: TriangleGrid, path: str | Path, title: str | None = None) -> Path:
    """Hexagon heatmap over the simplex; each cell's SVG group id encodes its composition."""
    if grid.kind == "rate":
        norm = Normalize(0.0, 1.0)
    else:
        low, high = value_range(grid).values()
        norm = Normalize(low, high if high > low else low + 1.0)
    cmap = colormaps[COLORMAP]

    fig = Figure(figsize=(5.0, 4.6))
    ax = fig.add_subplot()
    for (x, y), config, value in zip(project(grid.configs), grid.configs, grid.values):
        ax.add_patch(
            RegularPolygon(
                (x, y),
                numVertices=6,
                radius=CELL_RADIUS,
                facecolor=cmap(norm(value)),
                edgecolor="none",
                gid="cell-" + "-".join(str(n) for n in config),
            )
        )
    top, left, right = grid.colors
    pad = 1.5 * CELL_RADIUS
    ax.text(0.5, np.sqrt(3) / 2 + pad, f"10 {top.value}", ha="center", va="bottom")
    ax.text(-pad, -pad, f"10 {left.value}", ha="right", va="top")
    ax.text(1 + pad, -pad, f"10 {right.value}", ha="left", va="top")
    ax.set_xlim(-0.2, 1.2)
    ax.set_ylim(-0.15, np.sqrt(3) / 2 + 0.15)
    ax.set_aspect("equal")
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    fig.colorbar(ScalarMappable(norm=norm, cmap=cmap), ax=ax, shrink=0.7, label=grid.kind)
    fig.savefig(path, format="svg")
    return Path(path)


def render_bars(report: GridEvalReport, path: str | Path) -> Path:
    """Grouped bars of pickup fraction per color, one group per condition. Absent colors get no bar."""
    conditions = list(report.fractions)
    colors = sorted({c for fractions in report.fractions.values() for c in fractions})
    width = 0.8 / max(len(conditions), 1)

    fig = Figure(figsize=(5.0, 3.5))
    ax = fig.add_subplot()
    for i, condition in enumerate(conditions):
        for j, color in enumerate(colors):
            fraction = report.fractions[condition].get(color)
            if fraction is None:
                continue
            ax.bar(
                j + (i - (len(conditions) - 1) / 2) * width,
                fraction,
                width=width,
                color=f"C{i}",
                label=condition if j == 0 else None,
                gid=f"bar-{condition}-{color}",
            )
    ax.set_xticks(range(len(colors)), colors)
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("fraction picked up")
    if conditions:
        ax.legend()
    fig.savefig(path, format="svg")
    return Path(path)


def _emit_grids(
    grids: list[TriangleGrid], summary: TriangleGrid | None, metadata: dict, out_dir: Path, stem: str, formats
) -> list[Path]:
    written = []
    if "csv" in formats:
        written.append(write_csv(grids, out_dir / f"{stem}.csv"))
        if summary is not None:
            written.append(write_csv([summary], out_dir / f"{stem}_time_averaged.csv"))
    if "json" in formats:
        payload = {"metadata": metadata, "grids": [grid_to_dict(g) for g in grids]}
        if summary is not None:
            payload["time_averaged"] = grid_to_dict(summary)
        written.append(_write_json(payload, out_dir / f"{stem}.json"))
    if "svg" in formats:
        main = summary if summary is not None else grids[0]
        written.append(render_triangle(main, out_dir / f"{stem}.svg", title=stem))
        if len(grids) > 1:
            for grid in grids:
                name = f"{stem}_t{grid.timestep:02d}"
                written.append(render_triangle(grid, out_dir / f"{name}.svg", title=f"t = {grid.timestep}"))
    return written


def value_range(grid: TriangleGrid) -> dict:
    """Observed min and max, the bounds the value colormap is normalized to."""
    return {"min": float(np.nanmin(grid.values)), "max": float(np.nanmax(grid.values))}


def _with_range(grid: TriangleGrid, metadata: dict) -> dict:
    return {**metadata, "range": value_range(grid)} if grid.kind == "value" else metadata


def emit(
    report: EvalReport | GridEvalReport | EnsembleStats | TriangleGrid,
    out_dir: str | Path,
    formats: Iterable[str] = FORMATS,
    stem: str = "triangle",
    metadata: dict | None = None,
) -> list[Path]:
    """Write a report in the requested formats and return the written paths."""
    formats = tuple(formats)
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise ValueError(f"unknown output formats: {sorted(unknown)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    match report:
        case EvalReport():
            summary = report.time_averaged if len(report.per_timestep) > 1 else None
            written = _emit_grids(report.per_timestep, summary, report.metadata, out_dir, stem, formats)
        case TriangleGrid():
            written = _emit_grids([report], None, _with_range(report, metadata or {}), out_dir, stem, formats)
        case EnsembleStats():
            stats = {"spearman": report.spearman, "p_value": report.p_value, **(metadata or {})}
            written = []
            for grid, suffix in ((report.mean, "mean"), (report.std, "std")):
                written += _emit_grids([grid], None, _with_range(grid, stats), out_dir, f"{stem}_{suffix}", formats)
        case GridEvalReport():
            written = []
            if "csv" in formats:
                path = out_dir / f"{stem}.csv"
                report.episodes.to_csv(path, index=False)
                written.append(path)
            if "json" in formats:
                written.append(
                    _write_json({"metadata": report.metadata, "fractions": report.fractions}, out_dir / f"{stem}.json")
                )
            if "svg" in formats:
                written.append(render_bars(report, out_dir / f"{stem}.svg"))
        case _:
            raise ValueError(f"cannot emit {type(report).__name__}")

    logger.info(f"Wrote {len(written)} report files to {out_dir}")
    return written
