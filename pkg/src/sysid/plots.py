"""Static SVG line charts for force curves and the noise sweep.

Needs matplotlib, which is an optional dependency (``pip install sysid[plot]``).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .vehicle_model import pacejka_force


def _pyplot():
    try:
        import matplotlib
    except ImportError:
        raise ConfigError("SVG output needs matplotlib (pip install 'sysid[plot]')") from None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def force_curve_svg(rows, path, truth=None):
    """One panel per axle, one line per iteration, plus the truth if known."""
    plt = _pyplot()
    arr = np.asarray(rows, dtype=float)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6), sharey=False)
    iters = np.unique(arr[:, 3]).astype(int)
    for ax, col, name in ((axes[0], 1, "front"), (axes[1], 2, "rear")):
        for it in iters:
            sel = arr[:, 3] == it
            ax.plot(arr[sel, 0], arr[sel, col], lw=1.0,
                    color=str(0.75 - 0.6 * it / max(iters.max(), 1)), label=f"iter {it}")
        if truth is not None:
            alpha = arr[arr[:, 3] == iters[0], 0]
            tire = truth.front if name == "front" else truth.rear
            ax.plot(alpha, pacejka_force(alpha, tire), "r--", lw=1.2, label="truth")
        ax.set_title(f"{name} axle")
        ax.set_xlabel("slip angle [rad]")
        ax.grid(alpha=0.3)
    axes[0].set_ylabel("lateral force [N]")
    axes[1].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def sweep_svg(rows, path):
    """Mean one-step RMSE against noise multiplier, error bars one std."""
    plt = _pyplot()
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for method, style in (("ours", "o-"), ("nls", "s--")):
        sel = [r for r in rows if r["method"] == method]
        eta = [r["eta"] for r in sel]
        for ax, ch in zip(axes, ("vy", "omega")):
            ax.errorbar(eta, [r[f"rmse_{ch}_mean"] for r in sel],
                        yerr=[r[f"rmse_{ch}_std"] for r in sel], fmt=style, capsize=2,
                        label=method)
    axes[0].set_ylabel("RMSE v_y [m/s]")
    axes[1].set_ylabel("RMSE omega [rad/s]")
    for ax in axes:
        ax.set_xlabel("noise multiplier")
        ax.grid(alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
