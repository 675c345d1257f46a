"""Figure rendering for the report path: log-log excess-risk lines as SVG."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_SERIES_STYLE = {
    "holdin": dict(color="tab:green", marker="*", linestyle="-"),
    "retrained": dict(color="tab:blue", marker="^", linestyle="-"),
    "choice": dict(color="tab:red", marker="o", linestyle="-", alpha=0.6, linewidth=3),
    "exact": dict(color="black", marker="s", linestyle="-"),
    "approx": dict(color="tab:orange", marker="d", linestyle="--"),
    "h3": dict(color="tab:purple", marker="v", linestyle="-."),
}


def render_excess_risk_lines(
    path: str,
    series: dict[str, tuple[list[float], list[float]]],
    title: str,
    ylabel: str = "excess risk",
) -> None:
    """One SVG: x = sample size (log), y = excess risk (log), one line per policy."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for name, (xs, ys) in series.items():
        style = _SERIES_STYLE.get(name, {})
        ax.plot(xs, ys, label=name, **style)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel(ylabel)
    ax.set_title(title, fontsize=9)
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.25)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
