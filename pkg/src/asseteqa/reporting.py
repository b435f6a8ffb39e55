"""Comparison tables and figures across evaluation presets."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import AggregateReport  # noqa: E402

# (metric field, table header)
COLUMNS: list[tuple[str, str]] = [
    ("struct_ok", "Struct.OK"),
    ("prov_ok", "Prov.OK"),
    ("label_consistent", "Label Cons."),
    ("cf_direction_ok", "CF Acc."),
    ("temporal_ok", "Temporal"),
    ("value_ok", "Value"),
    ("entail_pass_rate", "Entail.Pass (sent.)"),
    ("entail_instance_pass", "Entail.Pass (inst.)"),
    ("claim_precision", "Claim Prec."),
]
CSV_HEADER = (
    ["config", "n_instances"]
    + [c for c, _ in COLUMNS]
    + ["full_pass", "full_pass_strict", "admit", "flag", "route_to_review"]
)
FIGURE_METRICS = ("struct_ok", "prov_ok", "label_consistent", "cf_direction_ok", "full_pass")


def report_row(rep: AggregateReport) -> dict[str, Any]:
    row: dict[str, Any] = {"config": rep.config, "n_instances": rep.n_instances}
    for name, _ in COLUMNS:
        row[name] = rep.metric(name)
    row["full_pass"] = rep.full_pass
    row["full_pass_strict"] = rep.full_pass_strict
    for outcome in ("admit", "flag", "route_to_review"):
        row[outcome] = rep.outcomes.get(outcome, 0)
    return row


def _cell(v: Any) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def write_csv(reports: Sequence[AggregateReport], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_HEADER, lineterminator="\n")
        writer.writeheader()
        for rep in reports:
            writer.writerow({k: ("" if v is None else (f"{v:.6f}" if isinstance(v, float) else v)) for k, v in report_row(rep).items()})


def render_markdown(
    reports: Sequence[AggregateReport],
    comparisons: Mapping[str, Mapping[str, Mapping[str, Any]]] | None = None,
    figure_name: str | None = None,
) -> str:
    headers = ["Configuration", "N"] + [h for _, h in COLUMNS] + ["Full Pass", "Full Pass (strict)"]
    lines = ["# Reliability by configuration", "", "| " + " | ".join(headers) + " |", "|" + "---|" * len(headers)]
    for rep in reports:
        row = report_row(rep)
        cells = [rep.config, str(rep.n_instances)] + [_cell(row[c]) for c, _ in COLUMNS]
        cells += [_cell(rep.full_pass), _cell(rep.full_pass_strict)]
        lines.append("| " + " | ".join(cells) + " |")
    lines += ["", "Full Pass is the mean of (Struct.OK + Prov.OK + Label Cons.) / 3 over diagnostic instances.", ""]
    lines += ["## Gate outcomes", "", "| Configuration | admit | flag | route_to_review |", "|---|---|---|---|"]
    for rep in reports:
        o = rep.outcomes
        lines.append(f"| {rep.config} | {o.get('admit', 0)} | {o.get('flag', 0)} | {o.get('route_to_review', 0)} |")
    if comparisons:
        lines += ["", "## McNemar tests against the full configuration", ""]
        lines += ["| Configuration | Task | b | c | p-value |", "|---|---|---|---|---|"]
        for config, per_task in comparisons.items():
            for task, res in per_task.items():
                lines.append(f"| {config} | {task} | {res['b']} | {res['c']} | {res['p_value']:.4g} |")
    if figure_name:
        lines += ["", f"![Metrics by configuration]({figure_name})"]
    return "\n".join(lines) + "\n"


def plot_reports(reports: Sequence[AggregateReport], path: str | Path) -> None:
    """Grouped bar chart of the headline metrics; deterministic PNG bytes."""
    labels = {"struct_ok": "Struct.OK", "prov_ok": "Prov.OK", "label_consistent": "Label Cons.",
              "cf_direction_ok": "CF Acc.", "full_pass": "Full Pass"}
    fig, ax = plt.subplots(figsize=(max(6.0, 1.4 * len(reports)), 4.0), dpi=100)
    width = 0.8 / len(FIGURE_METRICS)
    for j, metric in enumerate(FIGURE_METRICS):
        vals = []
        for rep in reports:
            v = rep.full_pass if metric == "full_pass" else rep.metric(metric)
            vals.append(0.0 if v is None else v)
        xs = [i + (j - (len(FIGURE_METRICS) - 1) / 2) * width for i in range(len(reports))]
        ax.bar(xs, vals, width=width, label=labels[metric])
    ax.set_xticks(range(len(reports)))
    ax.set_xticklabels([r.config for r in reports], rotation=20, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.legend(fontsize=8, ncol=len(FIGURE_METRICS), loc="upper center", bbox_to_anchor=(0.5, 1.15))
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def load_aggregate(path: str | Path) -> AggregateReport:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    return AggregateReport(**d)
