"""Result writers: JSON documents, plot-ready CSV and console tables."""

import csv
import logging
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from pydantic import BaseModel

from app.models.market import SteadyStateSummary, ThresholdProfile
from app.models.simulation import CheckResult, Histogram, SimEstimate
from app.models.state import SteadyState
from app.services.steady_state import structure_mass

logger = logging.getLogger(__name__)


def fmt(value: float) -> str:
    """Six significant digits; inf / nan spelled out."""
    if isinstance(value, float) and not math.isfinite(value):
        return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
    return f"{value:.6g}"


def out_dir(path: str | Path) -> Path:
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def write_json(path: Path, document: BaseModel) -> Path:
    path.write_text(document.model_dump_json(indent=2))
    logger.info(f"Wrote {path}")
    return path


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[float | str]]) -> Path:
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, float) else v for v in row])
    logger.info(f"Wrote {path}")
    return path


def profile_table(profile: ThresholdProfile) -> str:
    """One-row table, e.g. `n_max=3 T1=7.74 S1=7.20 S2=3.13`."""
    if profile.simulation_required:
        return f"{profile.summary()} (S-sequence requires simulation)"
    return profile.summary()


def write_steady_state(path: Path, steady: SteadyState) -> Path:
    keys = sorted(steady.densities, key=lambda s: (s.n, s.k))
    header = ["a"] + [f"p{s.label}" for s in keys]
    columns = [steady.densities[k] for k in keys]
    rows = ([float(a)] + [float(c[i]) for c in columns] for i, a in enumerate(steady.ages))
    return write_csv(path, header, rows)


def steady_state_summary(steady: SteadyState) -> SteadyStateSummary:
    masses = structure_mass(steady)
    return SteadyStateSummary(
        n_max=steady.n_max,
        pi0=steady.pi0,
        pi_n=[float(p) for p in steady.pi_n],
        p00=steady.p00,
        p10=steady.p10,
        total_mass=steady.total_mass,
        structure_mass={s.label: m for s, m in sorted(masses.items(), key=lambda item: (item[0].n, item[0].k))},
        residuals={name: float(v) for name, v in steady.residuals.items()},
    )


def write_curves(path: Path, x_name: str, x: np.ndarray, curves: dict[str, np.ndarray]) -> Path:
    header = [x_name] + list(curves)
    rows = ([float(v)] + [float(curves[k][i]) for k in curves] for i, v in enumerate(x))
    return write_csv(path, header, rows)


def write_histogram(path: Path, hist: Histogram) -> Path:
    edges = hist.edges
    rows = ([edges[i], edges[i + 1], d] for i, d in enumerate(hist.density))
    return write_csv(path, ["lo", "hi", "density"], rows)


def estimate_table(estimate: SimEstimate) -> str:
    lines = [f"{'n':>4} {'pi_hat':>12} {'se':>10}"]
    for n, e in enumerate(estimate.pi_hat):
        lines.append(f"{n:>4} {fmt(e.mean):>12} {fmt(e.se):>10}")
    for label, e in estimate.utility_at_threshold.items():
        lines.append(f"utility at {label}: {fmt(e.mean)} ± {fmt(e.se)} (n={e.count})")
    return "\n".join(lines)


def checks_table(checks: list[CheckResult]) -> str:
    width = max((len(c.name) for c in checks), default=10)
    return "\n".join(
        f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  value={fmt(c.value)}  tol={fmt(c.tolerance)}"
        + (f"  {c.detail}" if c.detail else "")
        for c in checks
    )
