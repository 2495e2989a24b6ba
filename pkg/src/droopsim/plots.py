"""Static vector charts from a logged time series.

Output is SVG with a fixed hash salt and no embedded timestamps, so the
same CSV always renders to byte-identical files.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from droopsim.errors import InvalidParameterError
from droopsim.simulator import TimeSeries

_SAVEFIG_KW = {"format": "svg", "metadata": {"Date": None}}


def _new_figure():
    plt.rcParams["svg.hashsalt"] = "droopsim"
    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    ax.grid(True, alpha=0.3)
    ax.set_xlabel("t [s]")
    return fig, ax


def emit_plots(ts: TimeSeries, out_dir: str):
    """Write powers.svg, voltage.svg, and frequency.svg under out_dir.

    Returns the list of written paths.  An empty series is rejected
    before anything is written.
    """
    if not ts.rows:
        raise InvalidParameterError("time series has no rows to plot")
    os.makedirs(out_dir, exist_ok=True)
    t = ts.column("t_s")
    written = []

    fig, ax = _new_figure()
    for i in range(1, ts.n_inverters + 1):
        ax.plot(t, ts.column(f"p_out_w_{i}"), label=f"P inverter {i}")
        ax.plot(t, ts.column(f"q_out_var_{i}"), linestyle="--",
                label=f"Q inverter {i}")
    ax.plot(t, ts.column("load_p_w"), color="black", alpha=0.6,
            label="P load")
    ax.set_ylabel("P [W] / Q [var]")
    ax.set_title("Inverter output and load power")
    ax.legend(loc="best", fontsize=8)
    path = os.path.join(out_dir, "powers.svg")
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
    written.append(path)

    fig, ax = _new_figure()
    ax.plot(t, ts.column("v_pcc_rms_ll_v"), color="tab:red")
    ax.set_ylabel("PCC voltage [V line-to-line RMS]")
    ax.set_title("Load bus voltage")
    path = os.path.join(out_dir, "voltage.svg")
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
    written.append(path)

    fig, ax = _new_figure()
    for i in range(1, ts.n_inverters + 1):
        ax.plot(t, ts.column(f"f_meas_hz_{i}"), label=f"inverter {i}")
    ax.set_ylabel("measured frequency [Hz]")
    ax.set_title("Controller frequency estimates")
    ax.legend(loc="best", fontsize=8)
    path = os.path.join(out_dir, "frequency.svg")
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
    written.append(path)

    return written
