"""SVG figures rendered from logged columns.

Figures are deterministic: the SVG id salt is fixed and the date
metadata is dropped, so identical columns give identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {"svg.hashsalt": "gpmpc", "svg.fonttype": "path", "figure.figsize": (7.0, 4.5)}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _check(columns: dict, required):
    if not columns or len(columns.get("t", [])) == 0:
        raise ValueError("cannot plot an empty log")
    missing = [c for c in required if c not in columns]
    if missing:
        raise ValueError(f"log is missing columns: {', '.join(missing)}")


def pathfollow_figures(columns: dict, out_dir, disturbance=None) -> list[Path]:
    """``e_lat.svg`` and ``e_head.svg``.

    When the log has GP columns and ``disturbance`` (the realized residual
    per row) is given, ``e_lat.svg`` gets a second panel with the GP mean,
    a 2-sigma band and the realized values.
    """
    _check(columns, ("t", "e_lat", "e_head"))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = np.asarray(columns["t"])
    has_gp = disturbance is not None and "gp_mean_0" in columns and np.any(np.isfinite(columns["gp_mean_0"]))
    paths = []
    with plt.rc_context(RC):
        fig, axes = plt.subplots(2 if has_gp else 1, 1, sharex=True, squeeze=False)
        ax = axes[0, 0]
        ax.plot(t, columns["e_lat"], lw=1.2)
        ax.axhline(0.0, color="0.6", lw=0.8)
        ax.set_ylabel("lateral error [m]")
        if has_gp:
            ax = axes[1, 0]
            m = np.asarray(columns["gp_mean_0"])
            s = np.sqrt(np.maximum(np.asarray(columns.get("gp_var_0", np.zeros_like(m))), 0.0))
            ax.fill_between(t, m - 2 * s, m + 2 * s, color="C0", alpha=0.25, lw=0, label="GP mean +/- 2 std")
            ax.plot(t, m, color="C0", lw=1.0)
            ax.plot(t, disturbance, ".", color="C3", ms=2, label="realized")
            ax.set_ylabel("disturbance")
            ax.legend(loc="upper right", fontsize=8)
        axes[-1, 0].set_xlabel("time [s]")
        paths.append(_save(fig, out / "e_lat.svg"))

        fig, ax = plt.subplots()
        ax.plot(t, columns["e_head"], lw=1.2)
        ax.axhline(0.0, color="0.6", lw=0.8)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("heading error [rad]")
        paths.append(_save(fig, out / "e_head.svg"))
    return paths


def platoon_figures(columns: dict, out_dir, delta: float) -> list[Path]:
    """``velocity.svg``, ``position.svg`` and ``distance.svg`` (with the minimum-gap line)."""
    _check(columns, ("t", "p_hv", "v_hv", "gap_hv", "v_ref"))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = np.asarray(columns["t"])
    av = sorted(k[4:] for k in columns if k.startswith("v_av"))
    paths = []
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.plot(t, columns["v_ref"], "k--", lw=1.0, label="reference")
        for n in av:
            ax.plot(t, columns[f"v_av{n}"], lw=1.2, label=f"AV {n}")
        ax.plot(t, columns["v_hv"], lw=1.2, color="C3", label="HV")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("speed [m/s]")
        ax.legend(loc="best", fontsize=8)
        paths.append(_save(fig, out / "velocity.svg"))

        fig, ax = plt.subplots()
        for n in av:
            ax.plot(t, columns[f"p_av{n}"], lw=1.2, label=f"AV {n}")
        ax.plot(t, columns["p_hv"], lw=1.2, color="C3", label="HV")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("position [m]")
        ax.legend(loc="best", fontsize=8)
        paths.append(_save(fig, out / "position.svg"))

        fig, ax = plt.subplots()
        for k in sorted(c for c in columns if c.startswith("gap_av")):
            ax.plot(t, columns[k], lw=1.2, label=f"AV {int(k[6:]) - 1} to AV {k[6:]}")
        ax.plot(t, columns["gap_hv"], lw=1.2, color="C3", label="last AV to HV")
        if "required_gap1" in columns:
            ax.plot(t, columns["required_gap1"], ":", color="C3", lw=1.0, label="tightened bound")
        ax.axhline(delta, color="k", ls="--", lw=1.0, label="minimum gap")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("distance [m]")
        ax.legend(loc="best", fontsize=8)
        paths.append(_save(fig, out / "distance.svg"))
    return paths
