"""Vector-graphic charts for the analysis outputs (SVG files).

Plots are derived artifacts; the CSVs are the canonical outputs.
"""

from __future__ import annotations

from typing import Sequence


def plot_top_allocations(top: Sequence[dict], randomized_ratio: float,
                         path: str) -> None:
    """Bar chart of winning rates with the boost of each entry annotated."""
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    fig, (ax_rate, ax_boost) = plt.subplots(
        2, 1, figsize=(8, 6), sharex=True,
        gridspec_kw={"height_ratios": [2, 1]})
    labels = [str(row["menu_index"]) for row in top]
    rates = [row["win_rate"] for row in top]
    boosts = [row["boost"] for row in top]
    ax_rate.bar(labels, rates, color="#4878cf")
    ax_rate.set_ylabel("winning rate")
    ax_rate.set_title(f"top winning menu entries "
                      f"(randomized-allocation ratio {randomized_ratio:.2%})")
    ax_boost.bar(labels, boosts, color="#d65f5f")
    ax_boost.set_ylabel("boost")
    ax_boost.set_xlabel("menu entry")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_revenue_by_size(rows: Sequence[tuple[str, Sequence[tuple[int, int]],
                                              Sequence[float]]],
                         path: str, x_label: str = "auction size") -> None:
    """Line chart of revenue across auction sizes for several mechanisms.

    ``rows`` holds (label, sizes, revenues) triples; sizes are (n, m) pairs.
    """
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, sizes, revenues in rows:
        ticks = [f"{n}x{m}" for n, m in sizes]
        ax.plot(ticks, revenues, marker="o", label=label)
    ax.set_xlabel(x_label)
    ax.set_ylabel("average revenue")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
