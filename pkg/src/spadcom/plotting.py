"""Figure rendering for the CLI report path (matplotlib, file output only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["render_rows"]

_STYLES = {
    "capacity": {
        "x": "snr_db",
        "xlabel": "optical SNR gP/sigma (dB)",
        "ylabel": "rate (bits per channel use)",
        "series": ["mpam_capacity", "sdt_capacity", "bmd_rate", "tx_rate",
                   "uniform_mi"],
        "logy": False,
    },
    "simulate-fer": {
        "x": "snr_db",
        "xlabel": "optical SNR gP/sigma (dB)",
        "ylabel": "frame error rate",
        "series": ["fer"],
        "logy": True,
    },
    "ergodic": {
        "x": "p_over_sigma_db",
        "xlabel": "P/sigma (dB)",
        "ylabel": "ergodic rate (bits per channel use)",
        "series": ["ergodic_rate_bpcu"],
        "logy": False,
    },
    "blind-design": {
        "x": "p_over_sigma_db",
        "xlabel": "P/sigma (dB)",
        "ylabel": "transmission rate (bits per channel use)",
        "series": ["rate_bpcu"],
        "logy": False,
    },
    "outage": {
        "x": "target_rate",
        "xlabel": "transmission rate (bits per channel use)",
        "ylabel": "outage probability",
        "series": ["outage_probability"],
        "logy": True,
    },
}


def render_rows(command: str, rows: list[dict], path: str) -> None:
    """Render the sweep table of a CLI command to an image file."""
    style = _STYLES.get(command)
    if style is None or not rows:
        return
    x = [row[style["x"]] for row in rows]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name in style["series"]:
        if name not in rows[0]:
            continue
        y = [row[name] for row in rows]
        ax.plot(x, y, marker="o", markersize=3, linewidth=1.2, label=name)
    if style["logy"]:
        ax.set_yscale("log")
    ax.set_xlabel(style["xlabel"])
    ax.set_ylabel(style["ylabel"])
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
