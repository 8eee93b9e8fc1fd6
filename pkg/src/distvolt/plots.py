"""Figure rendering for the report paths.

Every run that emits a delimited file can also drop a PNG next to it; the
CLI enables this by default.  Uses the Agg backend so runs stay headless.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def convergence_figure(rows, header, path, title="convergence"):
    """Residual / relative-error curves from a solve trace."""
    cols = {name: i for i, name in enumerate(header)}
    arr = np.array([[float(c) for c in row] for row in rows])
    xkey = "iter" if "iter" in cols else "tick"
    x = arr[:, cols[xkey]]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.semilogy(x, np.maximum(arr[:, cols["residual"]], 1e-300),
                label="fixed-point residual")
    rel_key = "rel_err_vs_wstar" if "rel_err_vs_wstar" in cols else "rel_err"
    rel = arr[:, cols[rel_key]]
    if np.any(np.isfinite(rel)):
        ax.semilogy(x[np.isfinite(rel)], np.maximum(rel[np.isfinite(rel)], 1e-300),
                    label="|w - w*|^2 / |w*|^2")
    ax.set_xlabel(xkey)
    ax.set_ylabel("residual")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def daily_figure(rows, path, title="daily voltage mismatch"):
    """Voltage error and optimality residual over the day."""
    minutes = [r[0] for r in rows]
    verr = [r[2] for r in rows]
    kkt = [r[3] for r in rows]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7.0, 5.5), sharex=True)
    ax1.plot(minutes, verr)
    ax1.set_ylabel("||v - v_ref||")
    ax1.set_title(title)
    ax1.grid(alpha=0.3)
    ax2.semilogy(minutes, np.maximum(kkt, 1e-300))
    ax2.set_ylabel("KKT residual")
    ax2.set_xlabel("minute")
    ax2.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def margins_figure(reports, path, title="operator property margins"):
    names = [r["property"] for r in reports]
    margins = [r["worst_margin"] for r in reports]
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.barh(names, margins)
    ax.axvline(0.0, color="k", lw=0.8)
    ax.set_xlabel("worst margin (>= 0 means the inequality held)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def acerror_figure(u_lin, u_ac, path, title="linear model vs AC sweep"):
    buses = np.arange(1, len(u_ac) + 1)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(buses, u_ac, "o-", label="AC sweep")
    ax.plot(buses, u_lin, "s--", label="linearized")
    ax.set_xlabel("bus")
    ax.set_ylabel("voltage magnitude (p.u.)")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
