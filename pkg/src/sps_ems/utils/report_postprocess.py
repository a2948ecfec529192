from typing import List, Sequence

from sps_ems.pipeline.compare import Verdict

_MARK = {"pass": "PASS", "fail": "FAIL", "indeterminate": "INDETERMINATE"}


def count_by_status(verdicts: Sequence[Verdict]) -> dict:
    out = {k: 0 for k in _MARK}
    for v in verdicts:
        out[v.status] = out.get(v.status, 0) + 1
    return out


def make_verdict(verdicts: Sequence[Verdict]) -> str:
    if not verdicts:
        return "No scenario verdicts (the three reference scenarios were not all compared)."
    counts = count_by_status(verdicts)
    if counts["fail"]:
        return f"{counts['fail']} of {len(verdicts)} expected scenario orderings do not hold."
    if counts["indeterminate"]:
        return "Orderings hold but at least one margin is too small to call."
    return "All expected scenario orderings hold."


def verdict_lines(verdicts: Sequence[Verdict]) -> List[str]:
    return [f"- **{_MARK.get(v.status, v.status)}** {v.claim} ({v.detail}; margin {v.margin:.3g})" for v in verdicts]


def add_header_block(report: str, verdicts: Sequence[Verdict]) -> str:
    lines = verdict_lines(verdicts)
    header = (
        f"**Verdict:** {make_verdict(verdicts)}\n\n"
        + ("\n".join(lines) + "\n\n" if lines else "")
        + "---\n\n"
    )
    return header + report
