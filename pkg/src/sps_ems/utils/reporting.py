import os
from typing import Any, Dict

from sps_ems.pipeline.compare import METRICS, ComparisonReport
from sps_ems.utils.report_postprocess import add_header_block


def _fmt(v: Any) -> str:
    if isinstance(v, int):
        return str(v)
    return f"{v:.6g}"


def comparison_markdown(report: ComparisonReport) -> str:
    names = list(report.runs)
    lines = ["| metric | " + " | ".join(names) + " |", "|---|" + "---|" * len(names)]
    for key in METRICS:
        lines.append(f"| {key} | " + " | ".join(_fmt(getattr(report.runs[n], key)) for n in names) + " |")

    lines += ["", "## Orderings (ascending)", ""]
    for key, order in report.orderings.items():
        lines.append(f"- {key}: {' < '.join(order)}")
    return "\n".join(lines)


def save_markdown_report(report: ComparisonReport, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "comparison.md")

    meta: Dict[str, Any] = report.meta
    body = add_header_block(comparison_markdown(report), report.verdicts)

    with open(path, "w", encoding="utf-8") as f:
        f.write("# Scenario Comparison Report\n\n")
        f.write(f"**Mode:** {meta.get('mode', '')}\n\n")
        f.write(f"**Horizon end:** {meta.get('t_final')} s\n\n")
        f.write(f"**Scenarios:** {', '.join(meta.get('scenarios', []))}\n\n")
        f.write("---\n\n")
        f.write(body)
        f.write("\n\n---\n\n")
        f.write("## Load profile\n\n")
        for t_start, t_end, power in meta.get("profile") or []:
            f.write(f"- [{t_start:g}, {t_end:g}) s: {power / 1e6:g} MW\n")

    return path
