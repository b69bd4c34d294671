"""Stratified aggregation and significance testing.

Groups claims into ALL / matched (M) / unmatched (notM) per generation
repeat, aggregates per-repeat metric values into mean +- standard error,
runs Mann-Whitney U tests for the configured comparisons, and renders the
result as machine JSON plus an aligned text table.
"""

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import DataError

GROUP_ALL = "ALL"
GROUP_MATCHED = "M"
GROUP_UNMATCHED = "NOT_M"
GROUPS = (GROUP_ALL, GROUP_MATCHED, GROUP_UNMATCHED)

_GROUP_DISPLAY = {GROUP_ALL: "ALL", GROUP_MATCHED: "M", GROUP_UNMATCHED: "¬M"}

EXACT_LIMIT = 12  # pooled size at or below which the U test enumerates exactly


def stratify(claim_ids: Iterable[str], match_records) -> tuple[set[str], set[str]]:
    """Partition claims into (matched, unmatched) for one repeat."""
    wanted = set(claim_ids)
    by_claim: dict[str, bool] = {}
    for rec in match_records:
        if rec.claim_id in by_claim:
            raise DataError(f"duplicate match record for claim {rec.claim_id!r}")
        by_claim[rec.claim_id] = rec.matched
    missing = wanted - set(by_claim)
    if missing:
        raise DataError(f"missing match record for claim {sorted(missing)[0]!r}")
    matched = {cid for cid in wanted if by_claim[cid]}
    return matched, wanted - matched


def mean_se(values: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error (sample sd / sqrt(n)); SE is 0 when n = 1."""
    if not values:
        raise DataError("mean_se needs at least one value")
    n = len(values)
    mean = sum(values) / n
    # constant vectors get SE exactly 0 (no float residue from the mean)
    if n == 1 or all(x == values[0] for x in values):
        return mean, 0.0
    var = sum((x - mean) ** 2 for x in values) / (n - 1)
    return mean, math.sqrt(var) / math.sqrt(n)


# --- Mann-Whitney U ------------------------------------------------------


def _midranks(pooled: Sequence[float]) -> list[float]:
    order = sorted(range(len(pooled)), key=lambda i: pooled[i])
    ranks = [0.0] * len(pooled)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _u_from_ranks(ranks: Sequence[float], n1: int) -> float:
    r1 = sum(ranks[:n1])
    return r1 - n1 * (n1 + 1) / 2.0


def _exact_p(pooled_ranks: list[float], n1: int, u_obs: float) -> float:
    """Two-sided exact p by enumerating all assignments of pooled values.

    Enumeration is over which pooled positions belong to the first sample,
    so tied values are handled by their (fixed) midranks.
    """
    n = len(pooled_ranks)
    n2 = n - n1
    mu = n1 * n2 / 2.0
    dev = abs(u_obs - mu)
    count = 0
    total = 0
    offset = n1 * (n1 + 1) / 2.0
    for combo in itertools.combinations(range(n), n1):
        u = sum(pooled_ranks[i] for i in combo) - offset
        if abs(u - mu) >= dev - 1e-12:
            count += 1
        total += 1
    return count / total


def _normal_p(pooled: Sequence[float], n1: int, u_obs: float) -> float:
    """Two-sided normal approximation with tie and continuity corrections."""
    n = len(pooled)
    n2 = n - n1
    mu = n1 * n2 / 2.0
    tie_sum = 0.0
    for _, grp in itertools.groupby(sorted(pooled)):
        t = sum(1 for _ in grp)
        tie_sum += t**3 - t
    var = (n1 * n2 / 12.0) * ((n + 1) - tie_sum / (n * (n - 1)))
    if var <= 0:
        return 1.0
    z = (abs(u_obs - mu) - 0.5) / math.sqrt(var)
    if z < 0:
        z = 0.0
    return min(1.0, math.erfc(z / math.sqrt(2)))


def mann_whitney_u(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """U statistic for the first sample and a two-sided p-value.

    Exact enumeration when the pooled size is <= 12 (ties handled via
    midranks of the fixed pool); otherwise the normal approximation with
    tie correction and continuity correction.
    """
    if not a or not b:
        raise DataError("mann_whitney_u needs two nonempty samples")
    pooled = list(a) + list(b)
    ranks = _midranks(pooled)
    u1 = _u_from_ranks(ranks, len(a))
    if len(pooled) <= EXACT_LIMIT:
        p = _exact_p(ranks, len(a), u1)
    else:
        p = _normal_p(pooled, len(a), u1)
    return u1, p


# --- Report assembly ------------------------------------------------------


@dataclass
class MetricCell:
    mean: float
    se: float
    n_repeats: int


@dataclass
class Comparison:
    """One requested pairwise test: two score vectors plus bookkeeping."""

    name: str
    metric: str
    mode: str
    a: list[float]
    b: list[float]


@dataclass
class ComparisonResult:
    name: str
    metric: str
    mode: str
    n_a: int
    n_b: int
    mean_a: float
    mean_b: float
    u: float
    p: float


@dataclass
class StratifiedReport:
    method: str
    model_id: str
    eval_mode: str
    k: int
    repeats: int
    metrics: list[str]
    # group -> metric -> cell (None when the group was empty in every repeat)
    groups: dict[str, dict[str, MetricCell | None]]
    group_sizes: dict[str, list[int]]
    baseline_name: str = ""
    baseline: dict[str, float] = field(default_factory=dict)
    matched_rate: dict = field(default_factory=dict)
    significance: list[ComparisonResult] = field(default_factory=list)
    tallies: dict[str, int] = field(default_factory=dict)
    tool_version: str = ""


def build_report(
    *,
    method: str,
    model_id: str,
    eval_mode: str,
    k: int,
    metrics: list[str],
    per_repeat_group_values: list[dict[str, dict[str, float | None]]],
    group_sizes: dict[str, list[int]],
    baseline_name: str = "",
    baseline: dict[str, float] | None = None,
    matched_rate: dict | None = None,
    comparisons: list[Comparison] | None = None,
    tallies: dict[str, int] | None = None,
    tool_version: str = "",
) -> StratifiedReport:
    """Aggregate per-repeat per-group metric values into a stratified report.

    per_repeat_group_values[r][group][metric] is the group's metric value
    for repeat r, or None when the group was empty in that repeat.
    """
    repeats = len(per_repeat_group_values)
    if repeats == 0:
        raise DataError("build_report needs at least one repeat")
    for r, table in enumerate(per_repeat_group_values):
        if set(table) != set(GROUPS):
            raise DataError(f"repeat {r}: group tables are inconsistent")

    group_cells: dict[str, dict[str, MetricCell | None]] = {}
    for group in GROUPS:
        cells: dict[str, MetricCell | None] = {}
        for metric in metrics:
            values = [
                table[group].get(metric)
                for table in per_repeat_group_values
            ]
            present = [v for v in values if v is not None]
            if not present:
                cells[metric] = None
                continue
            mean, se = mean_se(present)
            cells[metric] = MetricCell(mean=mean, se=se, n_repeats=len(present))
        n_counts = {cell.n_repeats for cell in cells.values() if cell is not None}
        if len(n_counts) > 1:
            raise DataError(f"group {group}: inconsistent repeat counts across metrics")
        group_cells[group] = cells

    results = []
    for comp in comparisons or []:
        u, p = mann_whitney_u(comp.a, comp.b)
        results.append(
            ComparisonResult(
                name=comp.name,
                metric=comp.metric,
                mode=comp.mode,
                n_a=len(comp.a),
                n_b=len(comp.b),
                mean_a=sum(comp.a) / len(comp.a),
                mean_b=sum(comp.b) / len(comp.b),
                u=u,
                p=p,
            )
        )

    return StratifiedReport(
        method=method,
        model_id=model_id,
        eval_mode=eval_mode,
        k=k,
        repeats=repeats,
        metrics=list(metrics),
        groups=group_cells,
        group_sizes={g: list(group_sizes.get(g, [])) for g in GROUPS},
        baseline_name=baseline_name,
        baseline=dict(baseline or {}),
        matched_rate=dict(matched_rate or {}),
        significance=results,
        tallies=dict(tallies or {}),
        tool_version=tool_version,
    )


def _round4(value):
    if isinstance(value, float):
        return round(value, 4)
    if isinstance(value, dict):
        return {key: _round4(val) for key, val in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round4(val) for val in value]
    return value


def report_to_dict(report: StratifiedReport) -> dict:
    groups = {}
    for group, cells in report.groups.items():
        groups[group] = {
            metric: (
                None
                if cell is None
                else {"mean": cell.mean, "se": cell.se, "n_repeats": cell.n_repeats}
            )
            for metric, cell in cells.items()
        }
    significance = [
        {
            "name": res.name,
            "metric": res.metric,
            "mode": res.mode,
            "n_a": res.n_a,
            "n_b": res.n_b,
            "mean_a": res.mean_a,
            "mean_b": res.mean_b,
            "u": res.u,
            "p": round(res.p, 6),
        }
        for res in report.significance
    ]
    return _round4(
        {
            "method": report.method,
            "model_id": report.model_id,
            "eval_mode": report.eval_mode,
            "k": report.k,
            "repeats": report.repeats,
            "metrics": report.metrics,
            "groups": groups,
            "group_sizes": report.group_sizes,
            "baseline_name": report.baseline_name,
            "baseline": report.baseline,
            "matched_rate": report.matched_rate,
            "significance": significance,
            "tallies": report.tallies,
            "tool_version": report.tool_version,
        }
    )


def report_json(report: StratifiedReport) -> str:
    """Deterministic machine rendering (sorted keys, rounded values)."""
    return json.dumps(report_to_dict(report), sort_keys=True, ensure_ascii=False, indent=2) + "\n"


def _fmt_cell(cell: MetricCell | None, with_se: bool = True) -> str:
    if cell is None:
        return "-"
    if with_se:
        return f"{cell.mean * 100:.1f} ± {cell.se * 100:.1f}"
    return f"{cell.mean * 100:.1f}"


def _fmt_size(sizes: list[int]) -> str:
    if not sizes:
        return "0"
    mean = sum(sizes) / len(sizes)
    return f"{mean:.0f}" if mean == int(mean) else f"{mean:.1f}"


def render_text(report: StratifiedReport) -> str:
    """Aligned table, metric values x100 with one decimal and a +- column."""
    headers = ["method", "group", "n"] + report.metrics
    rows: list[list[str]] = []
    if report.baseline:
        rows.append(
            [report.baseline_name or "baseline", _GROUP_DISPLAY[GROUP_ALL], _fmt_size(report.group_sizes.get(GROUP_ALL, []))]
            + [
                f"{report.baseline[m] * 100:.1f}" if m in report.baseline else "-"
                for m in report.metrics
            ]
        )
    for group in GROUPS:
        cells = report.groups[group]
        rows.append(
            [report.method, _GROUP_DISPLAY[group], _fmt_size(report.group_sizes.get(group, []))]
            + [_fmt_cell(cells.get(m)) for m in report.metrics]
        )

    widths = [
        max(len(headers[c]), *(len(row[c]) for row in rows)) for c in range(len(headers))
    ]
    lines = [
        f"run: method={report.method} model={report.model_id} mode={report.eval_mode}"
        f" k={report.k} repeats={report.repeats}",
    ]
    if report.matched_rate:
        mean = report.matched_rate.get("mean", 0.0) * 100
        se = report.matched_rate.get("se", 0.0) * 100
        lines.append(f"matched rate: {mean:.1f} ± {se:.1f}")
    lines.append("")
    lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(val.ljust(w) for val, w in zip(row, widths)).rstrip())
    if report.significance:
        lines.append("")
        lines.append("significance (Mann-Whitney U, two-sided):")
        for res in report.significance:
            lines.append(
                f"  {res.name} [{res.metric}, {res.mode}]:"
                f" mean_a={res.mean_a * 100:.1f} mean_b={res.mean_b * 100:.1f}"
                f" U={res.u:.1f} p={res.p:.6f}"
            )
    if report.tallies:
        lines.append("")
        parts = [f"{key}={val}" for key, val in sorted(report.tallies.items())]
        lines.append("tallies: " + " ".join(parts))
    return "\n".join(lines) + "\n"
