"""Figure rendering for the report path.

Every plotting function takes data that is also emitted as delimited text, so
the figures are a view of the artifacts rather than an extra computation.
All figures are written to files through the Agg backend.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_FIG_KW = {"dpi": 150, "bbox_inches": "tight"}


def plot_effective_potential(curve_r, curve_psi, markers, path, E_levels=()):
    """Effective-potential curve with the construction radii marked.

    ``markers`` maps label -> (radius, psi value).
    """
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    ax.plot(curve_r, curve_psi, color="black", lw=1.2)
    for E, lab in E_levels:
        ax.axhline(E, color="crimson", lw=0.7, ls="--")
        ax.annotate(lab, xy=(curve_r[-1], E), fontsize=8, color="crimson",
                    va="bottom", ha="right")
    for label, (r, psi) in markers.items():
        ax.plot([r], [psi], marker="o", ms=4, color="tab:blue")
        ax.annotate(label, xy=(r, psi), xytext=(2, 6), textcoords="offset points",
                    fontsize=8)
    ax.set_xlabel("r")
    ax.set_ylabel(r"$\Psi_{L_0}(r)$")
    lo = min(p for _, p in markers.values())
    hi = max(p for _, p in markers.values())
    pad = 0.3 * (hi - lo + 1e-6)
    ax.set_ylim(lo - pad, hi + pad)
    fig.savefig(path, **_FIG_KW)
    plt.close(fig)
    return path


def plot_state_profiles(ss, path):
    """Metric coefficients and matter fields of a steady state."""
    r = ss.r_grid
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7.0, 6.0), sharex=True)
    ax1.plot(r, ss.mu0(r), label=r"$\mu_0$")
    ax1.plot(r, ss.lambda0(r), label=r"$\lambda_0$")
    ax1.set_ylabel("metric coefficients")
    ax1.legend(frameon=False)
    ax2.plot(r, ss.rho0(r), label=r"$\rho_0$")
    ax2.plot(r, ss.p0(r), label=r"$p_0$")
    ax2.plot(r, ss.q0(r), label=r"$q_0$", ls="--")
    ax2.set_xlabel("r")
    ax2.set_ylabel("matter fields")
    ax2.legend(frameon=False)
    if ss.has_matter:
        for ax in (ax1, ax2):
            ax.axvspan(ss.Rmin, ss.Rmax, color="0.93", zorder=0)
        ax2.set_xlim(0 if ss.mode == "singfree" else 0.9 * ss.r_grid[0],
                     1.3 * ss.Rmax)
    fig.savefig(path, **_FIG_KW)
    plt.close(fig)
    return path


def plot_kernel(kern, path_heatmap, path_spectrum):
    """Heatmap of K(r, s) and the leading Nystrom eigenvalues."""
    fig, ax = plt.subplots(figsize=(5.6, 4.6))
    vmax = np.max(np.abs(kern.K)) or 1.0
    pc = ax.pcolormesh(kern.r_nodes, kern.r_nodes, kern.K, cmap="RdBu_r",
                       vmin=-vmax, vmax=vmax, shading="nearest")
    fig.colorbar(pc, ax=ax, label="K(r, s)")
    ax.set_xlabel("s")
    ax.set_ylabel("r")
    fig.savefig(path_heatmap, **_FIG_KW)
    plt.close(fig)

    ev = kern.eigensolve()
    n_show = min(len(ev), 30)
    fig, ax = plt.subplots(figsize=(5.6, 3.4))
    ax.plot(np.arange(1, n_show + 1), ev[:n_show], "o", ms=3.5)
    ax.axhline(1.0, color="crimson", lw=0.8, ls="--", label="instability threshold")
    ax.set_xlabel("mode index")
    ax.set_ylabel("eigenvalue")
    ax.set_yscale("symlog", linthresh=1e-12)
    ax.legend(frameon=False)
    fig.savefig(path_spectrum, **_FIG_KW)
    plt.close(fig)
    return path_heatmap, path_spectrum
