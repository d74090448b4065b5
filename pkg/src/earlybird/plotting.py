"""Matplotlib SVG figures for stage reports.

Output is byte-reproducible: fixed hash salt for element ids, no date stamp.
"""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "earlybird",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "image.interpolation": "nearest",
}

TRAJ_COLORS = {"ground truth": "0.15", "odometry": "tab:red", "optimized": "tab:blue"}


def save_svg(fig, path):
    with plt.rc_context(STYLE):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _figure(w, h, ncols=1):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, ncols, figsize=(w, h), squeeze=False)
    return fig, axes[0]


def cost_heatmap(cost, query_ids, reference_ids, matches, path, title="cosine distance"):
    """Query-by-reference cost matrix with the best match of each query marked."""
    cost = np.asarray(cost, dtype=np.float64)
    with plt.rc_context(STYLE):
        fig, (ax,) = _figure(5.0, 4.2)
        im = ax.imshow(cost, cmap="viridis", aspect="auto", origin="upper",
                       extent=(-0.5, cost.shape[1] - 0.5, cost.shape[0] - 0.5, -0.5))
        col = {r: j for j, r in enumerate(reference_ids)}
        row = {q: i for i, q in enumerate(query_ids)}
        mi = [(row[q], col[r]) for q, r, _ in matches if q in row and r in col]
        if mi:
            m = np.array(mi)
            ax.plot(m[:, 1], m[:, 0], ".", color="tab:red", ms=3.0, label="best match")
            ax.legend(loc="upper right", frameon=True)
        ax.set_xlabel("reference index (reverse pass)")
        ax.set_ylabel("query index (forward pass)")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, shrink=0.85)
        fig.tight_layout()
    save_svg(fig, path)


def correspondence_pair(img_q, img_m, q, m, inlier, path, title=""):
    """Query and reference views side by side, matched pixels joined by lines."""
    img_q = np.asarray(img_q)
    img_m = np.asarray(img_m)
    gap = 8
    h = max(img_q.shape[0], img_m.shape[0])
    canvas = np.ones((h, img_q.shape[1] + gap + img_m.shape[1]))
    canvas[:img_q.shape[0], :img_q.shape[1]] = img_q
    off = img_q.shape[1] + gap
    canvas[:img_m.shape[0], off:] = img_m
    q = np.asarray(q, dtype=np.float64).reshape(-1, 2)
    m = np.asarray(m, dtype=np.float64).reshape(-1, 2)
    inlier = np.asarray(inlier, dtype=bool).reshape(-1)
    with plt.rc_context(STYLE):
        fig, (ax,) = _figure(7.0, 7.0 * h / canvas.shape[1] + 0.5)
        ax.imshow(canvas, cmap="gray", vmin=0.0, vmax=1.0)
        for ok, color in ((False, "tab:red"), (True, "tab:green")):
            sel = inlier == ok
            if sel.any():
                xs = np.stack([q[sel, 0], m[sel, 0] + off, np.full(sel.sum(), np.nan)], axis=1).ravel()
                ys = np.stack([q[sel, 1], m[sel, 1], np.full(sel.sum(), np.nan)], axis=1).ravel()
                ax.plot(xs, ys, "-", color=color, lw=0.5, alpha=0.8,
                        label=f"{'inlier' if ok else 'outlier'} ({int(sel.sum())})")
        ax.set_axis_off()
        if len(q):
            ax.legend(loc="lower center", ncol=2, bbox_to_anchor=(0.5, -0.12))
        ax.set_title(title)
        fig.tight_layout()
    save_svg(fig, path)


def _draw_trajectories(ax, trajectories, loops=()):
    for name, traj in trajectories.items():
        ids = sorted(traj)
        p = np.array([np.asarray(traj[i])[:2] for i in ids])
        ax.plot(p[:, 0], p[:, 1], "-", color=TRAJ_COLORS.get(name, None), label=name,
                lw=1.6 if name == "ground truth" else 1.1)
    ref = trajectories.get("optimized")
    if ref is not None and loops:
        xs, ys = [], []
        for a, b in loops:
            if a in ref and b in ref:
                xs += [ref[a][0], ref[b][0], np.nan]
                ys += [ref[a][1], ref[b][1], np.nan]
        if xs:
            ax.plot(xs, ys, "-", color="tab:orange", lw=0.5, alpha=0.7, label="loop closures")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")


def trajectory_overlay(trajectories, path, loops=(), title=""):
    """Trajectories ``{label: {id: pose}}`` in the floor plane; ``loops`` are id pairs."""
    with plt.rc_context(STYLE):
        fig, (ax,) = _figure(5.5, 4.5)
        _draw_trajectories(ax, trajectories, loops)
        ax.legend(loc="best")
        ax.set_title(title)
        fig.tight_layout()
    save_svg(fig, path)


def ablation_overlays(panels, path):
    """One trajectory panel per variant; ``panels`` is a list of (title, trajectories, loops)."""
    n = len(panels)
    with plt.rc_context(STYLE):
        fig, axes = _figure(4.0 * n, 4.0, ncols=n)
        for ax, (title, trajs, loops) in zip(axes, panels):
            _draw_trajectories(ax, trajs, loops)
            ax.set_title(title)
        axes[0].legend(loc="best")
        fig.tight_layout()
    save_svg(fig, path)
