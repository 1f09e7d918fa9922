"""Artifact writers: structured exports (JSON, DOT, CSV) and rendered figures.

All delimited output is byte-deterministic for a fixed problem and seed;
floats are written with repr. Figures are rendered headlessly to PNG next to
the data they visualize and are skipped for state dimensions other than two.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib import cm, colors
from matplotlib.patches import Ellipse as EllipsePatch
from matplotlib.patches import Rectangle

from .abstraction import Abstraction, BuildResult, ValueTable, to_document
from .geometry import Ellipsoid, Hyperrectangle, contains_points

__all__ = [
    "dot_document",
    "render_abstraction_figure",
    "render_pareto_figure",
    "render_single_transition_figure",
    "render_value_grid_figure",
    "value_grid",
    "write_abstraction",
    "write_json",
    "write_pareto_csv",
    "write_trajectory_csv",
    "write_value_grid_csv",
]

_PNG_META = {"Software": "ellabs"}


def write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def dot_document(abstraction: Abstraction, values: ValueTable) -> str:
    lines = ["digraph abstraction {", "  rankdir=LR;"]
    for sid in sorted(abstraction.states):
        shape = "doublecircle" if sid == abstraction.root else "circle"
        lines.append(f'  {sid} [shape={shape} label="{sid}\\nv={values.values[sid]!r}"];')
    for tr in abstraction.transitions:
        lines.append(f'  {tr.source} -> {tr.target} [label="{tr.cost!r}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_abstraction(json_path, dot_path, abstraction: Abstraction, values: ValueTable) -> None:
    write_json(json_path, to_document(abstraction, values))
    Path(dot_path).write_text(dot_document(abstraction, values), encoding="utf-8")


def value_grid(abstraction: Abstraction, values: ValueTable, box: Hyperrectangle,
               res: int):
    """Refined value on a regular grid over the box; NaN marks uncovered points."""
    axes = [np.linspace(c - h, c + h, res)
            for c, h in zip(box.center, box.half_lengths)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    vals = np.full(pts.shape[0], np.nan)
    for sid, st in sorted(abstraction.states.items()):
        inside = contains_points(st.cell, pts)
        vals[inside] = np.fmin(vals[inside], values.values[sid])
    return axes, pts, vals


def write_value_grid_csv(path, pts: np.ndarray, vals: np.ndarray) -> None:
    n = pts.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(n)] + ["value"])
        for row, v in zip(pts, vals):
            writer.writerow([repr(float(c)) for c in row]
                            + (["uncovered"] if np.isnan(v) else [repr(float(v))]))


def write_trajectory_csv(path, traj, controller) -> None:
    n_x = traj.states.shape[1]
    n_u = traj.inputs.shape[1]
    header = (["step"] + [f"x{i + 1}" for i in range(n_x)]
              + [f"u{i + 1}" for i in range(n_u)]
              + ["cell_id", "stage_cost", "cum_cost", "value"])
    cum = 0.0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(len(traj) + 1):
            row = [str(k)] + [repr(float(v)) for v in traj.states[k]]
            if k < len(traj):
                cum += float(traj.stage_costs[k])
                row += [repr(float(v)) for v in traj.inputs[k]]
                row += [str(traj.cells[k]), repr(float(traj.stage_costs[k])), repr(cum)]
            else:
                row += [""] * n_u + ["", "", repr(cum)]
            row.append(repr(float(controller.refine_value(traj.states[k]))))
            writer.writerow(row)


def write_pareto_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "J_bound", "volume", "status"])
        for lam, j, vol, status in rows:
            writer.writerow([
                repr(float(lam)),
                "" if j is None else repr(float(j)),
                "" if vol is None else repr(float(vol)),
                status,
            ])


# ---------------------------------------------------------------------------
# figures (2-D state spaces only)
# ---------------------------------------------------------------------------


def _ellipse_patch(E: Ellipsoid, **kwargs) -> EllipsePatch:
    evals, evecs = np.linalg.eigh(E.shape)
    width, height = 2.0 / np.sqrt(evals)  # ascending eigenvalues: long axis first
    angle = float(np.degrees(np.arctan2(evecs[1, 0], evecs[0, 0])))
    return EllipsePatch(xy=E.center, width=width, height=height, angle=angle, **kwargs)


def _box_patch(box: Hyperrectangle, **kwargs) -> Rectangle:
    lo = box.center - box.half_lengths
    return Rectangle(lo, 2 * box.half_lengths[0], 2 * box.half_lengths[1], **kwargs)


def _save(fig, path) -> None:
    fig.savefig(path, dpi=130, metadata=_PNG_META)
    plt.close(fig)


def render_abstraction_figure(path, result: BuildResult, initial_box, target_box,
                              obstacle_boxes, domain: Hyperrectangle,
                              trajectories=()) -> None:
    if domain.dim != 2:
        return
    fig, ax = plt.subplots(figsize=(7.2, 6.0))
    vmax = max((v for v in result.values.values.values()), default=1.0)
    norm = colors.Normalize(vmin=0.0, vmax=max(vmax, 1e-9))
    cmap = cm.viridis_r
    for sid, st in sorted(result.abstraction.states.items()):
        col = cmap(norm(result.values.values[sid]))
        ax.add_patch(_ellipse_patch(st.cell, facecolor=col, alpha=0.55,
                                    edgecolor="k", linewidth=0.6))
    for tr in result.abstraction.transitions:
        src = result.abstraction.states[tr.source].cell.center
        dst = result.abstraction.states[tr.target].cell.center
        ax.annotate("", xy=dst, xytext=src,
                    arrowprops=dict(arrowstyle="->", color="0.25", lw=0.8))
    ax.add_patch(_box_patch(initial_box, facecolor="none", edgecolor="green", lw=1.8))
    ax.add_patch(_box_patch(target_box, facecolor="none", edgecolor="red", lw=1.8))
    for obs in obstacle_boxes:
        ax.add_patch(_box_patch(obs, facecolor="black", alpha=0.8))
    for traj in trajectories:
        ax.plot(traj.states[:, 0], traj.states[:, 1], "-", color="tab:blue", lw=1.2)
        ax.plot(traj.states[0, 0], traj.states[0, 1], "o", color="tab:blue", ms=4)
    ax.set_xlim(domain.center[0] - domain.half_lengths[0], domain.center[0] + domain.half_lengths[0])
    ax.set_ylim(domain.center[1] - domain.half_lengths[1], domain.center[1] + domain.half_lengths[1])
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_title(f"abstraction: {result.abstraction.n_states} cells, "
                 f"{result.abstraction.n_transitions} transitions")
    fig.colorbar(cm.ScalarMappable(norm=norm, cmap=cmap), ax=ax, label="guaranteed cost-to-target")
    ax.set_aspect("equal")
    _save(fig, path)


def render_value_grid_figure(path, axes, vals: np.ndarray) -> None:
    if len(axes) != 2:
        return
    nx, ny = len(axes[0]), len(axes[1])
    grid = vals.reshape(nx, ny)
    fig, ax = plt.subplots(figsize=(6.8, 5.6))
    masked = np.ma.masked_invalid(grid.T)
    pcm = ax.pcolormesh(axes[0], axes[1], masked, shading="nearest", cmap="viridis_r")
    fig.colorbar(pcm, ax=ax, label="refined value")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_title("guaranteed cost-to-target (uncovered left blank)")
    _save(fig, path)


def render_pareto_figure(path, rows) -> None:
    ok = [(lam, j, vol) for lam, j, vol, status in rows if status == "optimal"]
    fig, ax = plt.subplots(figsize=(6.4, 5.0))
    if ok:
        lams, js, vols = zip(*ok)
        sc = ax.scatter(vols, js, c=lams, cmap="plasma", zorder=3)
        ax.plot(vols, js, "-", color="0.6", lw=1.0, zorder=2)
        fig.colorbar(sc, ax=ax, label="lambda")
    ax.set_xlabel("cell volume")
    ax.set_ylabel("worst-case transition cost bound")
    ax.set_title("cost/volume trade-off")
    _save(fig, path)


def render_single_transition_figure(path, solution, target: Ellipsoid,
                                    inputs, n_samples: int = 0) -> None:
    if solution.P.shape[0] != 2:
        return
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11.0, 5.0))
    cell = solution.cell
    ax1.add_patch(_ellipse_patch(cell, facecolor="tab:green", alpha=0.4,
                                 edgecolor="darkgreen", label="source cell"))
    ax1.add_patch(_ellipse_patch(target, facecolor="none", edgecolor="red",
                                 lw=1.8, label="target cell"))
    ax1.plot(*cell.center, "k+", ms=8)
    ax1.plot(*target.center, "r+", ms=8)
    ax1.autoscale_view()
    ax1.relim()
    ax1.set_aspect("equal")
    ax1.set_xlabel("x1")
    ax1.set_ylabel("x2")
    ax1.legend(loc="upper left")
    ax1.set_title(f"J_bound={solution.J_bound:.3g}, vol={solution.volume:.3g}")
    # input-space view: constraint ellipsoids and the image of the cell
    if solution.K.shape[0] == 2:
        theta = np.linspace(0.0, 2.0 * np.pi, 256)
        ring = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        boundary = cell.center + ring @ cell.sqrt_inv_shape().T
        u_img = solution.control(boundary)
        for k, M in enumerate(inputs.constraints):
            sq = M.T @ M
            evals = np.linalg.eigvalsh(sq)
            if evals[0] > 1e-12:
                ax2.add_patch(_ellipse_patch(Ellipsoid(np.zeros(2), sq), facecolor="none",
                                             edgecolor="tab:blue", lw=1.2))
        ax2.fill(u_img[:, 0], u_img[:, 1], color="tab:green", alpha=0.5,
                 label="inputs used on the cell")
        ax2.autoscale_view()
        ax2.set_aspect("equal")
        ax2.set_xlabel("u1")
        ax2.set_ylabel("u2")
        ax2.legend(loc="upper left")
        ax2.set_title("input set and used inputs")
    _save(fig, path)
