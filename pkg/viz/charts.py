# viz/charts.py

import logging
from pathlib import Path

import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

# widest cell window drawn around 𝔓 in the heatmap
HEATMAP_WINDOW = 120


# =========================================================
# Edge-count Histogram (with μ marker)
# =========================================================
def plot_edge_histogram(edge_counts, mu, title="Edge counts"):
    frame = pd.DataFrame({"edges": np.asarray(edge_counts, dtype=float)})

    fig = px.histogram(frame, x="edges", nbins=40, title=title)
    fig.add_vline(x=mu, line_dash="dash", line_color="red", annotation_text="μ")

    fig.update_layout(
        template="plotly_white",
        xaxis_title="|E|",
        yaxis_title="replicas",
        showlegend=False,
    )
    return fig


# =========================================================
# Localization Heatmap (cell counts, 𝔓 outlined)
# =========================================================
def _window_around(centre, m):
    half = min(HEATMAP_WINDOW, m) // 2
    return [(int(centre) - half + k) % m for k in range(min(HEATMAP_WINDOW, m))]


def plot_localization_heatmap(cfg, frakP, title="Localization"):
    """
    d = 2: heatmap of X_I on a window around 𝔓 with 𝔓 cells marked.
    d = 1: bar chart of X_I on the same kind of window.
    """
    grid = cfg.grid
    P_cells = frakP.cells() if len(frakP) else np.zeros((0, grid.dim), dtype=np.int64)
    if len(P_cells):
        centre = P_cells[0]
    elif len(cfg.cells):
        centre = cfg.coords()[int(np.argmax(cfg.counts))]
    else:
        centre = np.zeros(grid.dim, dtype=np.int64)

    if grid.dim == 1:
        rows = _window_around(centre[0], grid.m)
        counts = cfg.count_at(np.asarray(rows))
        in_P = frakP.members(np.asarray(rows)) if len(frakP) else np.zeros(len(rows), dtype=bool)
        fig = go.Figure(
            go.Bar(
                x=[str(c) for c in rows],
                y=counts,
                marker_color=np.where(in_P, "crimson", "steelblue"),
            )
        )
        fig.update_layout(template="plotly_white", title=title, xaxis_title="cell", yaxis_title="X_I")
        return fig

    if grid.dim != 2:
        logger.warning("⚠️ heatmap drawn for d = 2 only (got d = %d)", grid.dim)
        return go.Figure()

    rows = _window_around(centre[0], grid.m)
    cols = _window_around(centre[1], grid.m)
    flat = np.ravel_multi_index(np.meshgrid(rows, cols, indexing="ij"), grid.shape)
    z = cfg.count_at(flat)

    fig = go.Figure(go.Heatmap(z=z.T, x=rows, y=cols, colorscale="Viridis", colorbar=dict(title="X_I")))
    if len(P_cells):
        fig.add_trace(
            go.Scatter(
                x=P_cells[:, 0],
                y=P_cells[:, 1],
                mode="markers",
                marker=dict(symbol="square-open", color="red", size=10),
                name="𝔓",
            )
        )
    fig.update_layout(
        template="plotly_white",
        title=title,
        xaxis=dict(type="category", title="i0"),
        yaxis=dict(type="category", title="i1"),
    )
    return fig


# =========================================================
# LDP Convergence (normalized log-tail vs log n)
# =========================================================
def plot_ldp_convergence(rows, rate=None):
    """
    rows: dicts with n, normalized_estimate, normalized_err,
    normalized_lower, normalized_upper.
    rate: I(t); drawn as the reference line at −I(t) when given.
    """
    if not rows:
        return go.Figure()

    frame = pd.DataFrame(rows).sort_values("n")
    log_n = np.log(frame["n"])

    fig = go.Figure()
    fig.add_trace(go.Scatter(x=log_n, y=frame["normalized_upper"], mode="lines", name="upper bound", line=dict(color="gray")))
    fig.add_trace(
        go.Scatter(
            x=log_n,
            y=frame["normalized_lower"],
            mode="lines",
            name="lower bound",
            fill="tonexty",
            line=dict(color="gray"),
        )
    )
    fig.add_trace(
        go.Scatter(
            x=log_n,
            y=frame["normalized_estimate"],
            error_y=dict(type="data", array=frame["normalized_err"].fillna(0.0)),
            mode="markers+lines",
            name="estimate",
            marker=dict(color="crimson", size=9),
        )
    )
    if rate is not None and np.isfinite(rate):
        fig.add_hline(y=-rate, line_dash="dash", line_color="black", annotation_text="−I(t)")

    fig.update_layout(
        template="plotly_white",
        title="Normalized log-tail",
        xaxis_title="log n",
        yaxis_title="log P / (√μ log n)",
    )
    return fig


# =========================================================
# RGG Instance (d = 2)
# =========================================================
def plot_rgg_instance(ps, r, title="Random geometric graph"):
    if ps.norm.dim != 2:
        logger.warning("⚠️ instance plot needs d = 2 (got d = %d)", ps.norm.dim)
        return go.Figure()

    pts = ps.points
    fig = go.Figure()
    if len(pts) > 1:
        pairs = cKDTree(pts, boxsize=1.0).query_pairs(r, p=ps.norm.order, output_type="ndarray")
        a, b = pts[pairs[:, 0]], pts[pairs[:, 1]]
        # edges across the torus seam are not drawn
        local = np.all(np.abs(a - b) < 0.5, axis=1)
        xs = np.column_stack([a[local, 0], b[local, 0], np.full(local.sum(), np.nan)]).ravel()
        ys = np.column_stack([a[local, 1], b[local, 1], np.full(local.sum(), np.nan)]).ravel()
        fig.add_trace(go.Scatter(x=xs, y=ys, mode="lines", line=dict(color="lightgray", width=1), name="edges"))
    fig.add_trace(go.Scatter(x=pts[:, 0], y=pts[:, 1], mode="markers", marker=dict(size=4, color="navy"), name="points"))

    fig.update_layout(
        template="plotly_white",
        title=title,
        xaxis=dict(range=[0, 1], scaleanchor="y"),
        yaxis=dict(range=[0, 1]),
    )
    return fig


# =========================================================
# Export
# =========================================================
def save_figure(fig, path):
    """
    Write an SVG through kaleido; without a working static export the
    figure goes to a self-contained HTML file next to the requested path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        fig.write_image(str(path), format="svg")
        return path
    except Exception as exc:
        fallback = path.with_suffix(".html")
        logger.warning("⚠️ SVG export failed (%s); writing %s", exc, fallback.name)
        fig.write_html(str(fallback), include_plotlyjs=True, full_html=True)
        return fallback
