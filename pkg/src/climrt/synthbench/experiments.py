"""Parameter-m sweep and ablation tables."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from climrt.synthbench.ope import run_ope
from climrt.tracker.model import VARIANTS, ClimRTParams
from climrt.tracker.track import ClimRTTracker

# Reported on UAVTrack112; kept as reference metadata, never asserted on synthetic data.
REFERENCE_M_BEST = {"m": 1, "precision": 0.770, "success": 0.588}
REFERENCE_ABLATION = {
    "Baseline": (0.742, None, 0.570, None),
    "LCT": (0.747, 0.7, 0.573, 0.5),
    "GSTC+LCT": (0.754, 1.6, 0.575, 0.9),
    "MS fusion+LCT": (0.759, 2.3, 0.581, 1.9),
    "ClimNet+LCT": (0.770, 3.8, 0.588, 3.2),
}


class MissingWeightsError(KeyError):
    pass


def with_m(params: ClimRTParams, m: int) -> ClimRTParams:
    return dataclasses.replace(params, config=dataclasses.replace(params.config, m=m))


def sweep_m(params: ClimRTParams, sequences, m_values=(1, 2, 3, 4, 5), jobs: int = 1) -> list[tuple[int, float, float]]:
    """(m, precision, success AUC) per interval, in increasing m."""
    rows = []
    for m in sorted(set(int(v) for v in m_values)):
        p = with_m(params, m)
        report, _ = run_ope(lambda ann, p=p: ClimRTTracker(p), sequences, jobs)
        rows.append((m, report.precision, report.auc))
    return rows


@dataclass
class AblationRow:
    variant: str
    precision: float
    d_precision: float
    success: float
    d_success: float


def _delta(value: float, base: float) -> float:
    if base == 0:
        return 0.0 if value == 0 else float("inf")
    return 100.0 * (value - base) / base


def run_ablation(weights: dict[str, ClimRTParams], sequences, jobs: int = 1) -> list[AblationRow]:
    """One row per Table-2 variant; deltas are percent changes relative to Baseline."""
    missing = [v for v in VARIANTS if v not in weights]
    if missing:
        raise MissingWeightsError(f"no weights for variants: {', '.join(missing)}")
    scores = {}
    for variant in VARIANTS:
        params = weights[variant]
        report, _ = run_ope(lambda ann, p=params: ClimRTTracker(p), sequences, jobs)
        scores[variant] = (report.precision, report.auc)
    base_p, base_s = scores["Baseline"]
    rows = []
    for variant in VARIANTS:
        prec, succ = scores[variant]
        if variant == "Baseline":
            rows.append(AblationRow(variant, prec, 0.0, succ, 0.0))
        else:
            rows.append(AblationRow(variant, prec, _delta(prec, base_p), succ, _delta(succ, base_s)))
    return rows


def sweep_text(rows) -> str:
    lines = [f"{'m':>3}{'precision':>11}{'success':>10}"] + [f"{m:>3d}{p:>11.4f}{s:>10.4f}" for m, p, s in rows]
    ref = REFERENCE_M_BEST
    lines.append(f"# reference (UAVTrack112): best m={ref['m']} precision={ref['precision']:.3f} success={ref['success']:.3f}")
    return "\n".join(lines) + "\n"


def sweep_csv(rows) -> str:
    return "m,precision,success\n" + "".join(f"{m},{p:.6f},{s:.6f}\n" for m, p, s in rows)


def _fmt_delta(d: float) -> str:
    return "-" if d == 0 else f"{d:+.1f}"


def ablation_text(rows: list[AblationRow]) -> str:
    head = f"{'variant':<16}{'prec':>8}{'d_prec%':>9}{'succ':>8}{'d_succ%':>9}   {'ref_prec':>8}{'ref_d%':>7}{'ref_succ':>9}{'ref_d%':>7}"
    lines = [head]
    for r in rows:
        rp, rdp, rs, rds = REFERENCE_ABLATION[r.variant]
        lines.append(
            f"{r.variant:<16}{r.precision:>8.4f}{_fmt_delta(r.d_precision):>9}{r.success:>8.4f}{_fmt_delta(r.d_success):>9}"
            f"   {rp:>8.3f}{('-' if rdp is None else f'{rdp:+.1f}'):>7}{rs:>9.3f}{('-' if rds is None else f'{rds:+.1f}'):>7}"
        )
    return "\n".join(lines) + "\n"


def ablation_csv(rows: list[AblationRow]) -> str:
    out = "variant,precision,d_precision_pct,success,d_success_pct\n"
    return out + "".join(f"{r.variant},{r.precision:.6f},{r.d_precision:.4f},{r.success:.6f},{r.d_success:.4f}\n" for r in rows)
