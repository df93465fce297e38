"""Experiment drivers: ablation arms, regret reports, curve exports.

Everything here consumes a finished RunResult (or drives runs itself) and
reduces it to the artifacts a study needs: summary metrics, tidy CSVs,
static SVG charts, and machine-checkable reports.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from .oracle import dynamic_regret, lemma1_check, lemma2_check, regret_slope
from .scenario import (
    ConfigError,
    RunResult,
    ScenarioConfig,
    ScenarioRunner,
    TRACE_SCHEMA,
    resolve_out_dir,
    trace_columns,
)

# the four comparison arms: signal choice crossed with fleet participation
ARMS = (
    ("AIE", True),
    ("ACE", True),
    ("AIE", False),
    ("ACE", False),
)


def arm_label(signal: str, bess_enabled: bool) -> str:
    return f"{signal.lower()}_{'bess' if bess_enabled else 'nobess'}"


def settle_time(
    t, df, threshold: float = 0.005, window: float = 10.0
) -> float:
    """First time |df| stays inside the band for `window` seconds.

    The search starts at the first excursion beyond the band, so the quiet
    stretch before a disturbance never counts as settling.  Returns 0.0
    when the band is never left and inf when the signal never settles.
    """
    t = np.asarray(t, dtype=float)
    df = np.asarray(df, dtype=float)
    if len(t) < 2:
        raise ValueError("need at least two samples")
    adf = np.abs(df)
    above = np.nonzero(adf >= threshold)[0]
    if len(above) == 0:
        return 0.0
    n = int(round(window / (t[1] - t[0])))
    ok = adf < threshold
    run = 0
    for i in range(above[0], len(ok)):
        run = run + 1 if ok[i] else 0
        if run >= n:
            return float(t[i - n + 1])
    return float("inf")


def nadir(df) -> float:
    """Deepest frequency excursion, signed."""
    df = np.asarray(df, dtype=float)
    return float(df[np.argmax(np.abs(df))])


@dataclass
class ArmSummary:
    signal: str
    bess_enabled: bool
    trace_path: str
    nadir_hz: float
    settle_s: float
    signal_rms: float


def run_ablation(config: ScenarioConfig, out_dir: str | None = None):
    """Run the four signal/participation arms on identical disturbances.

    Returns (results, summaries): the per-arm RunResult map keyed by
    (signal, bess_enabled) and the comparison summary list, which is also
    written to `<name>_ablation.json` next to the traces.
    """
    out = resolve_out_dir(out_dir)
    results = {}
    summaries = []
    for signal, bess in ARMS:
        cfg = replace(
            config,
            name=f"{config.name}_{arm_label(signal, bess)}",
            signal=signal,
            bess_enabled=bess,
        )
        result = ScenarioRunner(cfg).run(out_dir=out)
        results[(signal, bess)] = result
        summaries.append(
            ArmSummary(
                signal=signal,
                bess_enabled=bess,
                trace_path=result.trace_path,
                nadir_hz=nadir(result.df[:, 0]),
                settle_s=settle_time(result.time, result.df[:, 0]),
                signal_rms=float(
                    np.sqrt(np.mean(result.signal_total**2))
                ),
            )
        )
    path = os.path.join(out, f"{config.name}_ablation.json")
    with open(path, "w") as fh:
        json.dump([asdict(s) for s in summaries], fh, indent=2)
        fh.write("\n")
    return results, summaries


def stage_lemma_checks(result: RunResult, gamma: float) -> list:
    """Evaluate both per-stage certificate inequalities on a logged run.

    Needs a run recorded with the per-interval reference solution; every
    stage with at least two iterations is checked.
    """
    if result.u_star is None:
        raise ValueError("run must log the per-interval reference solution")
    if len(result.infos) != len(result.time):
        raise ValueError("run must log optimizer state at every interval")
    u = np.stack([result.d, result.c], axis=2)
    out = []
    for sid, lo, hi in result.stages:
        if hi - lo < 2:
            continue
        infos = result.infos[lo:hi]
        kap = np.array([i["kappa"] for i in infos])
        eps = np.array([i["eps"] for i in infos])
        lam = np.stack([i["lam"] for i in infos])
        lam_mixed = np.stack([i["lam_mixed"] for i in infos])
        y = np.stack([i["y"] for i in infos])
        y_mixed = np.stack([i["y_mixed"] for i in infos])
        s = np.stack([i["s"] for i in infos])
        chk1 = lemma1_check(
            u[lo:hi], result.u_star[lo:hi], s, lam, lam_mixed, y, y_mixed,
            kap, eps, gamma, result.f_dist[lo:hi], result.f_oracle[lo:hi],
        )
        b_u = float(
            np.linalg.norm(u[lo:hi].reshape(hi - lo, -1), axis=1).max()
        )
        chk2 = lemma2_check(u[lo:hi], result.u_star[lo:hi], kap, b_u)
        out.append(
            {
                "stage": int(sid),
                "length": hi - lo,
                "lemma1": chk1,
                "lemma2": chk2,
            }
        )
    return out


def stage_cost_gaps(result: RunResult, min_len: int = 1) -> list:
    """Final-quarter average cost gap against the reference, per stage."""
    if result.f_oracle is None:
        raise ValueError("run must log the per-interval reference cost")
    out = []
    for sid, lo, hi in result.stages:
        ln = hi - lo
        if ln < min_len:
            continue
        q = max(1, ln // 4)
        window = slice(hi - q, hi)
        gap = float(
            np.abs(result.f_dist[window] - result.f_oracle[window]).mean()
        )
        ref = float(result.f_oracle[window].mean())
        if ref > 0:
            ratio = gap / ref
        else:
            ratio = 0.0 if gap == 0.0 else float("inf")
        out.append(
            {
                "stage": int(sid),
                "length": ln,
                "start_s": float(result.time[lo]),
                "gap_avg": gap,
                "oracle_avg": ref,
                "ratio": ratio,
            }
        )
    return out


def run_regret_study(
    config: ScenarioConfig, horizons, out_dir: str | None = None
):
    """Run the scenario against the per-interval reference and report.

    The report carries the cumulative cost gap at each horizon (measured
    on the longest logged stage), the fitted growth exponent, both
    certificate checks per stage, and the final-quarter gap per converged
    stage.  Written to `<name>_regret.json`; returns (result, report).
    """
    horizons = [int(h) for h in horizons]
    if not horizons or any(
        b <= a for a, b in zip(horizons, horizons[1:])
    ) or horizons[0] <= 0:
        raise ConfigError("horizons must be positive and ascending")
    if not config.bess_enabled:
        raise ConfigError("regret study needs the fleet enabled")
    out = resolve_out_dir(out_dir)
    result = ScenarioRunner(config, oracle_every=True).run(out_dir=out)
    stages = result.stages
    sid, lo, hi = max(stages, key=lambda st: st[2] - st[1])
    usable = [h for h in horizons if h <= hi - lo]
    regs = [
        dynamic_regret(result.f_dist[lo:hi], result.f_oracle[lo:hi], T=h)
        for h in usable
    ]
    try:
        fit = regret_slope(usable, regs)
        fit_entry = asdict(fit)
    except ValueError as err:
        fit, fit_entry = None, {"error": str(err)}
    checks = stage_lemma_checks(result, config.optimizer.gamma)
    min_len = max(2, config.optimizer.t_max // 2)
    report = {
        "trace": result.trace_path,
        "stage_count": len(stages),
        "longest_stage": {
            "stage": int(sid),
            "start_s": float(result.time[lo]),
            "length": hi - lo,
        },
        "regret": [
            {"horizon": h, "value": g} for h, g in zip(usable, regs)
        ],
        "skipped_horizons": [h for h in horizons if h > hi - lo],
        "slope": fit_entry,
        "certificates": [
            {
                "stage": c["stage"],
                "length": c["length"],
                "lemma1": {
                    "lhs": float(c["lemma1"].lhs),
                    "rhs": float(c["lemma1"].rhs),
                    "holds": bool(c["lemma1"].holds),
                },
                "lemma2": {
                    "lhs": float(c["lemma2"].lhs),
                    "rhs": float(c["lemma2"].rhs),
                    "holds": bool(c["lemma2"].holds),
                },
            }
            for c in checks
        ],
        "final_quarter_gaps": stage_cost_gaps(result, min_len=min_len),
        "reference_clamped_intervals": result.oracle_clamped,
    }
    path = os.path.join(out, f"{config.name}_regret.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return result, report


# ---------------------------------------------------------------------------
# curve exports: tidy CSVs plus small static SVG charts
# ---------------------------------------------------------------------------

_PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd",
    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
)


def _write_csv(path: str, header: list, columns: list) -> str:
    rows = np.column_stack(columns)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.10g}" for v in row])
    return path


def _ticks(lo: float, hi: float, count: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, count)


def svg_line_chart(
    path: str, x, series: dict, title: str, x_label: str, y_label: str
) -> str:
    """Write a fixed-size SVG line chart; series maps label to y values."""
    x = np.asarray(x, dtype=float)
    width, height = 860, 420
    left, right, top, bottom = 64, 16, 36, 44
    pw, ph = width - left - right, height - top - bottom
    ys = [np.asarray(v, dtype=float) for v in series.values()]
    y_lo = min(float(v.min()) for v in ys)
    y_hi = max(float(v.max()) for v in ys)
    pad = 0.05 * (y_hi - y_lo) or 1.0
    y_lo, y_hi = y_lo - pad, y_hi + pad
    x_lo, x_hi = float(x.min()), float(x.max())
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    sx = lambda v: left + (v - x_lo) / (x_hi - x_lo) * pw
    sy = lambda v: top + (y_hi - v) / (y_hi - y_lo) * ph
    stride = max(1, len(x) // 1500)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left}" y="20" font-family="sans-serif" '
        f'font-size="14" font-weight="bold">{title}</text>',
    ]
    for tick in _ticks(y_lo, y_hi):
        py = sy(tick)
        parts.append(
            f'<line x1="{left}" y1="{py:.1f}" x2="{width - right}" '
            f'y2="{py:.1f}" stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{left - 6}" y="{py + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{tick:.4g}</text>'
        )
    for tick in _ticks(x_lo, x_hi):
        px = sx(tick)
        parts.append(
            f'<text x="{px:.1f}" y="{height - bottom + 16}" '
            f'text-anchor="middle" font-family="sans-serif" '
            f'font-size="11">{tick:.4g}</text>'
        )
    parts.append(
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" '
        f'stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{left}" y1="{top + ph}" x2="{width - right}" '
        f'y2="{top + ph}" stroke="black" stroke-width="1"/>'
    )
    for k, (label, y) in enumerate(series.items()):
        color = _PALETTE[k % len(_PALETTE)]
        pts = " ".join(
            f"{sx(xv):.1f},{sy(yv):.1f}"
            for xv, yv in zip(x[::stride], y[::stride])
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="1.5"/>'
        )
        ly = top + 14 + 16 * k
        lx = width - right - 150
        parts.append(
            f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{lx + 28}" y="{ly}" font-family="sans-serif" '
            f'font-size="12">{label}</text>'
        )
    parts.append(
        f'<text x="{left + pw / 2:.1f}" y="{height - 8}" '
        f'text-anchor="middle" font-family="sans-serif" '
        f'font-size="12">{x_label}</text>'
    )
    parts.append(
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">{y_label}</text>'
    )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
    return path


def export_step_event_curves(
    result: RunResult, out_dir: str | None = None
) -> list:
    """Per-agent net power and marginal-cost curves, plus the online-vs-
    reference cost pair when the run logged it.  fig5a/fig5b/fig5c are the
    stable artifact names for the standard report."""
    out = resolve_out_dir(out_dir)
    n = result.d.shape[1]
    t = result.time
    paths = []
    net = result.d - result.c
    paths.append(
        _write_csv(
            os.path.join(out, "fig5a.csv"),
            ["time_s"] + [f"net_power_{i + 1}_mw" for i in range(n)],
            [t] + [net[:, i] for i in range(n)],
        )
    )
    paths.append(
        svg_line_chart(
            os.path.join(out, "fig5a.svg"),
            t,
            {f"agent {i + 1}": net[:, i] for i in range(n)},
            "Per-agent net power",
            "time (s)",
            "net power (MW)",
        )
    )
    paths.append(
        _write_csv(
            os.path.join(out, "fig5b.csv"),
            ["time_s"] + [f"marginal_{i + 1}" for i in range(n)],
            [t] + [result.marginals[:, i] for i in range(n)],
        )
    )
    paths.append(
        svg_line_chart(
            os.path.join(out, "fig5b.svg"),
            t,
            {f"agent {i + 1}": result.marginals[:, i] for i in range(n)},
            "Active-coordinate marginal wear cost",
            "time (s)",
            "marginal cost",
        )
    )
    if result.f_oracle is not None:
        paths.append(
            _write_csv(
                os.path.join(out, "fig5c.csv"),
                ["time_s", "cost_online", "cost_reference"],
                [t, result.f_dist, result.f_oracle],
            )
        )
        paths.append(
            svg_line_chart(
                os.path.join(out, "fig5c.svg"),
                t,
                {
                    "online": result.f_dist,
                    "reference": result.f_oracle,
                },
                "Instantaneous cost, online vs centralized reference",
                "time (s)",
                "cost",
            )
        )
    return paths


def export_ablation_curves(results: dict, out_dir: str | None = None) -> list:
    """Area-1 frequency deviation for the four arms on one axis (fig6)."""
    out = resolve_out_dir(out_dir)
    first = next(iter(results.values()))
    t = first.time
    labels = {
        (s, b): arm_label(s, b) for s, b in results
    }
    paths = [
        _write_csv(
            os.path.join(out, "fig6.csv"),
            ["time_s"] + [f"df1_{labels[k]}_hz" for k in results],
            [t] + [results[k].df[:, 0] for k in results],
        ),
        svg_line_chart(
            os.path.join(out, "fig6.svg"),
            t,
            {labels[k]: results[k].df[:, 0] for k in results},
            "Frequency deviation by signal and fleet participation",
            "time (s)",
            "df area 1 (Hz)",
        ),
    ]
    return paths


def export_fluctuation_curves(
    result: RunResult, out_dir: str | None = None
) -> list:
    """Net load, fleet power, and per-battery SoC trajectories (fig7)."""
    out = resolve_out_dir(out_dir)
    t = result.time
    n = result.soc.shape[1]
    paths = [
        _write_csv(
            os.path.join(out, "fig7.csv"),
            ["time_s", "net_load_mw", "fleet_power_mw"]
            + [f"soc_{i + 1}" for i in range(n)],
            [t, result.dist, result.p_bess]
            + [result.soc[:, i] for i in range(n)],
        ),
        svg_line_chart(
            os.path.join(out, "fig7_power.svg"),
            t,
            {"net load": result.dist, "fleet power": result.p_bess},
            "Net-load fluctuation and fleet response",
            "time (s)",
            "power (MW)",
        ),
        svg_line_chart(
            os.path.join(out, "fig7_soc.svg"),
            t,
            {f"battery {i + 1}": result.soc[:, i] for i in range(n)},
            "State of charge under fluctuating net load",
            "time (s)",
            "SoC",
        ),
    ]
    return paths


# ---------------------------------------------------------------------------
# post-run trace validation
# ---------------------------------------------------------------------------


def verify_trace(
    path: str, soc_min: float = 0.2, soc_max: float = 0.8
) -> dict:
    """Check a written trace against the row-level invariants.

    Validates the schema line, the column layout, uniform time steps,
    finite values, SoC bounds, one-sided battery dispatch, mode codes,
    and the logged multiplier-bound column.  Returns a report dict with
    `passed` plus one entry per check.
    """
    with open(path) as fh:
        schema_line = fh.readline().strip()
        reader = csv.reader(fh)
        header = next(reader)
        rows = [list(map(float, row)) for row in reader]
    report = {"trace": path, "rows": len(rows), "checks": {}, "passed": True}

    def record(name, ok, detail=""):
        report["checks"][name] = {"ok": bool(ok), "detail": detail}
        if not ok:
            report["passed"] = False

    record(
        "schema",
        schema_line == f"# schema: {TRACE_SCHEMA}",
        schema_line,
    )
    n = sum(1 for c in header if c.startswith("soc_"))
    n_cg = sum(1 for c in header if c.startswith("p_m_cg"))
    record(
        "columns",
        header == trace_columns(n, n_cg),
        f"{len(header)} columns, {n} agents, {n_cg} generators",
    )
    if not report["checks"]["columns"]["ok"] or not rows:
        record("rows_present", bool(rows))
        return report
    data = np.array(rows)
    col = {name: k for k, name in enumerate(header)}
    record("finite", bool(np.isfinite(data).all()))
    t = data[:, col["time"]]
    steps = np.diff(t)
    record(
        "uniform_time",
        bool(len(t) == 1 or (steps > 0).all()
             and np.allclose(steps, steps[0], rtol=0, atol=1e-9)),
        f"step {steps[0]:.6g} s" if len(t) > 1 else "single row",
    )
    soc = data[:, [col[f"soc_{i}"] for i in range(n)]]
    bad = np.nonzero((soc < soc_min - 1e-9) | (soc > soc_max + 1e-9))
    record(
        "soc_bounds",
        bad[0].size == 0,
        "" if bad[0].size == 0 else f"first violation at row {bad[0][0]}",
    )
    d = data[:, [col[f"d_{i}"] for i in range(n)]]
    c = data[:, [col[f"c_{i}"] for i in range(n)]]
    both = np.nonzero((d > 0) & (c > 0))
    record(
        "one_sided_dispatch",
        both[0].size == 0,
        "" if both[0].size == 0 else f"first violation at row {both[0][0]}",
    )
    modes = data[:, [col[f"mode_{i}"] for i in range(n)]]
    record("mode_codes", bool(np.isin(modes, (-1.0, 0.0, 1.0)).all()))
    lam = np.abs(data[:, [col[f"lam_{i}"] for i in range(n)]]).max(axis=1)
    bound = data[:, col["dual_bound"]]
    active = bound > 0
    record(
        "multiplier_bound",
        bool((lam[active] <= bound[active] + 1e-9).all()),
        f"{int(active.sum())} bounded rows",
    )
    return report
