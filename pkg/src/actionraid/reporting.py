"""Delimited report files and the JSON summary for sweep results.

All floats are written with repr(), which round-trips float64 exactly,
and every file uses "\n" line endings regardless of platform, so
rerunning the same sweep always reproduces identical bytes.

Schemas (documented headers):
  episodes.csv  seed,kind,p,q,B,H,cum_reward,length
  steps.csv     episode,t,d0..d{m-1},delta_norm,reward
  dims.csv      episode,kind,p,q,B,H,d0..d{m-1},total
  traces.csv    episode,kind,q,t,delta_norm
  ablation.csv  kind,p,q,B,H,mean_reward,nominal_mean,reduction
  las_vs_mas.csv p,q,B,H,b,las_mean,mas_mean,difference
  summary.json  run metadata plus per-cell reward stats

The ``episode`` id in steps.csv/dims.csv/traces.csv is the 0-based row
index into episodes.csv.
"""

import csv
import json

import numpy as np

from .errors import ConfigError, FormatError
from .harness import EpisodeView, cell_stats, group_views
from .projections import NormOrder


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        raise FormatError("booleans have no CSV encoding here")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_episodes_csv(path, views) -> None:
    rows = [
        (v.seed, v.kind, int(v.spatial), int(v.temporal), v.budget, v.horizon,
         v.cum_reward, v.length)
        for v in views
    ]
    _write_rows(path, ["seed", "kind", "p", "q", "B", "H", "cum_reward", "length"], rows)


def write_steps_csv(path, views) -> None:
    if not views:
        raise FormatError("steps.csv needs at least one episode")
    m = views[0].deltas.shape[1]
    header = ["episode", "t"] + [f"d{i}" for i in range(m)] + ["delta_norm", "reward"]
    rows = []
    for v in views:
        for t in range(v.length):
            rows.append(
                (v.episode, t, *v.deltas[t], v.delta_norms[t], v.rewards[t])
            )
    _write_rows(path, header, rows)


def write_dims_csv(path, dim_rows) -> None:
    if not dim_rows:
        raise FormatError("dims.csv needs at least one row")
    header = list(dim_rows[0].keys())
    _write_rows(path, header, [tuple(r[k] for k in header) for r in dim_rows])


def write_traces_csv(path, trace_rows) -> None:
    header = ["episode", "kind", "q", "t", "delta_norm"]
    _write_rows(path, header, [tuple(r[k] for k in header) for r in trace_rows])


def write_ablation_csvs(reductions_path, las_vs_mas_path, tables) -> None:
    red_header = ["kind", "p", "q", "B", "H", "mean_reward", "nominal_mean", "reduction"]
    _write_rows(reductions_path, red_header,
                [tuple(r[k] for k in red_header) for r in tables["reductions"]])
    lm_header = ["p", "q", "B", "H", "b", "las_mean", "mas_mean", "difference"]
    _write_rows(las_vs_mas_path, lm_header,
                [tuple(r[k] for k in lm_header) for r in tables["las_minus_mas"]])


def write_summary_json(path, env_name: str, agent_id: str, n_episodes: int,
                       base_seed: int, views) -> None:
    """Per-cell reward stats: mean, median, linear quartiles, min, max."""
    cells = []
    for cell, cell_views in group_views(views):
        stats = cell_stats([v.cum_reward for v in cell_views])
        cells.append(
            {
                "kind": cell.kind,
                "p": int(cell.spatial),
                "q": int(cell.temporal),
                "B": float(cell.budget),
                "H": int(cell.horizon),
                **stats,
            }
        )
    payload = {
        "version": 1,
        "env": env_name,
        "agent": agent_id,
        "n_episodes": int(n_episodes),
        "base_seed": int(base_seed),
        "cells": cells,
    }
    with open(path, "w", newline="") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_csv(path) -> list:
    try:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))
    except FileNotFoundError:
        raise ConfigError(f"missing report input {path}")


def read_views(episodes_path, steps_path) -> list:
    """Rebuild episode views from episodes.csv plus steps.csv.

    repr round-trips float64 exactly, so the rebuilt views are
    bit-identical to the in-memory ones the files were written from.
    """
    ep_rows = _read_csv(episodes_path)
    step_rows = _read_csv(steps_path)
    if not ep_rows:
        raise ConfigError(f"{episodes_path} holds no episodes")
    if not step_rows:
        raise ConfigError(f"{steps_path} holds no steps")

    dim_cols = [k for k in step_rows[0].keys() if k.startswith("d") and k[1:].isdigit()]
    dim_cols.sort(key=lambda k: int(k[1:]))
    per_episode = {}
    for row in step_rows:
        per_episode.setdefault(int(row["episode"]), []).append(row)

    views = []
    for idx, row in enumerate(ep_rows):
        srows = per_episode.get(idx, [])
        srows.sort(key=lambda r: int(r["t"]))
        length = int(row["length"])
        if len(srows) != length:
            raise FormatError(
                f"episode {idx}: {len(srows)} step rows for recorded length {length}"
            )
        deltas = np.array([[float(r[c]) for c in dim_cols] for r in srows])
        views.append(
            EpisodeView(
                episode=idx,
                seed=int(row["seed"]),
                kind=row["kind"],
                spatial=NormOrder(int(row["p"])),
                temporal=NormOrder(int(row["q"])),
                budget=float(row["B"]),
                horizon=int(row["H"]),
                cum_reward=float(row["cum_reward"]),
                length=length,
                deltas=deltas,
                delta_norms=np.array([float(r["delta_norm"]) for r in srows]),
                rewards=np.array([float(r["reward"]) for r in srows]),
            )
        )
    return views
