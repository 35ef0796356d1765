"""Training carbon-emission estimates.

Total training power (kilowatts) applies a 1.58 power-usage-effectiveness
factor to the summed component draws:

    p_train = 1.58 * (p_cpu + p_mem + gpus * p_gpu) / 1000

and the emitted CO2-equivalent mass (pounds, via the 0.954 lbs/kWh grid
average of the source formulation) is

    co2e = 0.954 * p_train * duration_h

Power values arrive as numbers (run telemetry or config constants); the
formulas never sample hardware.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Sequence

__all__ = [
    "EmissionReport",
    "PowerProfile",
    "carbon_emission",
    "emission_csv",
    "emission_reduction",
    "gpu_only",
    "training_power",
]

PUE_FACTOR = 1.58
LBS_CO2E_PER_KWH = 0.954


@dataclass(frozen=True)
class PowerProfile:
    """Average component power draws in watts and the GPU count."""

    p_cpu_w: float
    p_mem_w: float
    p_gpu_w: float
    gpus: int = 0


@dataclass(frozen=True)
class EmissionReport:
    p_train_kw: float
    duration_h: float
    co2e_lbs: float


def gpu_only(profile: PowerProfile) -> PowerProfile:
    """Profile restricted to GPU draw (CPU and DRAM zeroed)."""
    return PowerProfile(p_cpu_w=0.0, p_mem_w=0.0, p_gpu_w=profile.p_gpu_w, gpus=profile.gpus)


def training_power(profile: PowerProfile) -> float:
    """Total training power in kilowatts."""
    bad = [
        name
        for name, value in (
            ("p_cpu_w", profile.p_cpu_w),
            ("p_mem_w", profile.p_mem_w),
            ("p_gpu_w", profile.p_gpu_w),
            ("gpus", profile.gpus),
        )
        if value < 0
    ]
    if bad:
        raise ValueError(f"power profile fields must be non-negative: {', '.join(bad)}")
    return PUE_FACTOR * (profile.p_cpu_w + profile.p_mem_w + profile.gpus * profile.p_gpu_w) / 1000.0


def carbon_emission(profile: PowerProfile, duration_h: float) -> EmissionReport:
    """Emission estimate for a training run of ``duration_h`` hours."""
    if duration_h < 0:
        raise ValueError(f"duration_h must be non-negative, got {duration_h}")
    p_train = training_power(profile)
    return EmissionReport(
        p_train_kw=p_train,
        duration_h=duration_h,
        co2e_lbs=LBS_CO2E_PER_KWH * p_train * duration_h,
    )


def emission_reduction(candidate: EmissionReport, baseline: EmissionReport) -> float:
    """Percent reduction of the candidate's emission relative to the baseline."""
    if baseline.co2e_lbs <= 0:
        raise ValueError("baseline emission must be positive")
    return 100.0 * (1.0 - candidate.co2e_lbs / baseline.co2e_lbs)


def emission_csv(
    rows: Sequence[tuple[str, EmissionReport, Optional[float]]],
    seed: int | None = None,
) -> str:
    """``label,p_train_kw,hours,co2e_lbs,reduction_pct`` table."""
    out = io.StringIO()
    if seed is not None:
        out.write(f"# seed={seed}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["label", "p_train_kw", "hours", "co2e_lbs", "reduction_pct"])
    for label, report, reduction in rows:
        writer.writerow(
            [
                label,
                repr(report.p_train_kw),
                repr(report.duration_h),
                repr(report.co2e_lbs),
                f"{reduction:.2f}" if reduction is not None else "",
            ]
        )
    return out.getvalue()
