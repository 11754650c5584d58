"""CSV heatmaps, JSONL episode logs and overhead tables.

Heatmaps hold one matrix per ``(policy, noise)`` pair: rows are scenario
ids, columns are iteration levels, cells are success rates with three
decimals. All row and column orders are sorted so the files are byte
stable across runs.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .harness import Cell, EpisodeResult, OverheadRow, success_table

RATE_FORMAT = "{:.3f}"


def heatmap_name(policy: str, noise: str) -> str:
    return f"heatmap_{policy}_{noise}.csv"


def heatmap_rows(cells: dict[tuple, Cell], policy: str, noise: str) -> list[list[str]]:
    mine = [c for c in cells.values() if c.policy == policy and c.noise == noise]
    levels = sorted({c.iterations for c in mine})
    scenarios = sorted({c.scenario for c in mine})
    lookup = {(c.scenario, c.iterations): c for c in mine}
    rows = [["scenario", *map(str, levels)]]
    for sc in scenarios:
        row = [sc]
        for level in levels:
            cell = lookup.get((sc, level))
            row.append(RATE_FORMAT.format(cell.success_rate) if cell else "")
        rows.append(row)
    return rows


def write_heatmaps(results: list[EpisodeResult], out_dir: str | Path) -> list[Path]:
    if not results:
        raise ValueError("no results to export")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = success_table(results)
    written = []
    for policy, noise in sorted({(c.policy, c.noise) for c in cells.values()}):
        path = out_dir / heatmap_name(policy, noise)
        with path.open("w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(heatmap_rows(cells, policy, noise))
        written.append(path)
    return written


def read_heatmap(path: str | Path) -> dict[tuple[str, int], float]:
    """Parse a heatmap back into ``{(scenario, iterations): rate}``; blank cells are skipped."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    levels = [int(v) for v in rows[0][1:]]
    table = {}
    for row in rows[1:]:
        for level, value in zip(levels, row[1:]):
            if value:
                table[(row[0], level)] = float(value)
    return table


def _episode_order(r: EpisodeResult):
    return (r.scenario, r.iterations, r.policy, r.noise, r.seed)


def write_episodes(results: list[EpisodeResult], path: str | Path, timing: bool = True) -> Path:
    """One JSON object per episode, ordered by scenario, then iteration level."""
    if not results:
        raise ValueError("no results to export")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for r in sorted(results, key=_episode_order):
            fh.write(json.dumps(r.to_record(timing), sort_keys=True) + "\n")
    return path


def read_episodes(path: str | Path) -> list[EpisodeResult]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            rec["step_ms"] = tuple(rec.get("step_ms", ()))
            out.append(EpisodeResult(**rec))
    return out


def write_overhead(rows: list[OverheadRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "iterations", "mean_ms", "ratio", "steps"])
        for r in sorted(rows, key=lambda r: (r.iterations, r.policy)):
            w.writerow([r.policy, r.iterations, f"{r.mean_ms:.3f}", f"{r.ratio:.3f}", r.steps])
    return path


def read_samples(path: str | Path) -> list[float]:
    """Numbers from a one-column CSV (or any CSV: every numeric cell is taken)."""
    values = []
    with Path(path).open(newline="") as fh:
        for row in csv.reader(fh):
            for cell in row:
                cell = cell.strip()
                if not cell:
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    continue  # header or label
    return values
