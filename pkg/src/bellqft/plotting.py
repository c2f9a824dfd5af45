"""Optional figures rendered next to the CSV reports (matplotlib, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_tv(report, path):
    """TV distance to Born per sample time with the 3 sigma multinomial bound."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(report.sample_times, report.tv, "o-", label="TV(empirical, Born)")
    ax.plot(report.sample_times, report.tv_bound, "k--", label="3 sigma bound")
    ax.set_xlabel("t")
    ax.set_ylabel("total variation")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_distributions(report, path, max_cells=40):
    """Empirical against Born distribution at the last sample time."""
    plt = _plt()
    born = report.born[-1]
    emp = report.empirical[-1]
    order = np.argsort(born)[::-1][:max_cells]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    x = np.arange(order.size)
    ax.bar(x - 0.2, born[order], width=0.4, label="Born")
    ax.bar(x + 0.2, emp[order], width=0.4, label="empirical")
    ax.set_xlabel("configuration (by Born weight)")
    ax.set_ylabel("probability")
    ax.set_title(f"t = {report.sample_times[-1]:g}")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_master(result, path):
    """Pointwise master-equation residual against time."""
    plt = _plt()
    res = np.max(np.abs(result.rho - result.born), axis=1)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.semilogy(result.times, np.maximum(res, 1e-18))
    ax.set_xlabel("t")
    ax.set_ylabel("max |rho - Born|")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
