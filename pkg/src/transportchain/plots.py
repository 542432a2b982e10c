"""Figure rendering for benchmark results: throughput and latency versus
send rate, one series per transaction type, written as PNG files next to
the delimited output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_bench_figures(aggregate: dict, out_dir: str | Path) -> list[Path]:
    """Render the two benchmark panels from SuiteResult.aggregate() data.

    Writes bench_throughput.png, bench_latency.png and a combined
    bench_overview.png; returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def draw(ax, metric: str, ylabel: str, logy: bool = False):
        for tx_type in sorted(aggregate):
            series = aggregate[tx_type]
            ax.errorbar(series["rates"], series[f"{metric}_mean"],
                        yerr=series[f"{metric}_std"], marker="o", capsize=3,
                        label=tx_type)
        ax.set_xlabel("send rate (tps)")
        ax.set_ylabel(ylabel)
        if logy:
            ax.set_yscale("log")
        ax.grid(True, alpha=0.3)
        ax.legend()

    fig, ax = plt.subplots(figsize=(6, 4))
    draw(ax, "throughput", "throughput (valid tx/s)")
    ax.set_title("Throughput vs send rate")
    fig.tight_layout()
    path = out / "bench_throughput.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    draw(ax, "latency", "mean latency (s)", logy=True)
    ax.set_title("Latency vs send rate")
    fig.tight_layout()
    path = out / "bench_latency.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    draw(ax1, "throughput", "throughput (valid tx/s)")
    ax1.set_title("Throughput")
    draw(ax2, "latency", "mean latency (s)", logy=True)
    ax2.set_title("Latency")
    fig.tight_layout()
    path = out / "bench_overview.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written
