"""Shared pytest config: the acceptance-criteria scoreboard.

Each test_criterion_NN test in test_acceptance.py maps to one acceptance
criterion; after the run the terminal summary prints one PASS/FAIL line per
criterion, with any measured detail the test recorded.
"""

import re
import sys

CRITERIA = {
    1: "closed forms match the Monte Carlo oracle (3 sigma, 1e6 trials, "
       "200-point grid)",
    2: "case probabilities form a simplex; interruption pmf normalizes",
    3: "queue-delay form matches the batch-arrival FIFO queue simulation",
    4: "shortest/top-3 compositions match exhaustive enumeration on 1000 "
       "random graphs",
    5: "bit-identical event digests across 10 runs; phase sums are exact",
    6: "degenerate permanent-contact scenario reproduces transfer+execution "
       "exactly",
    7: "policy ordering MEV < AFIR < ATO < RAN with separated intervals",
    8: "MEV is per-request best most often and has the lowest mean loss",
    9: "rank-1 fraction beats uniform and fractions fall with rank",
    10: "model-estimated mean within 25% of the simulated mean",
    11: "AFIR-MEV gap grows monotonically under combined cpu/io stress",
}

# tests record measured numbers here for the summary lines
ACCEPTANCE_DETAILS = {}

_PATTERN = re.compile(r"test_criterion_(\d\d)")


def record_detail(criterion: int, text: str):
    ACCEPTANCE_DETAILS[criterion] = text


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes = {}
    for status in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(status, ()):
            nodeid = getattr(report, "nodeid", "")
            m = _PATTERN.search(nodeid)
            if m:
                outcomes[int(m.group(1))] = status
    if not outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(CRITERIA):
        if num not in outcomes:
            continue
        verdict = "PASS" if outcomes[num] == "passed" else "FAIL"
        detail = ACCEPTANCE_DETAILS.get(num)
        suffix = f"  [{detail}]" if detail else ""
        line = f"criterion {num:>2}: {verdict}  {CRITERIA[num]}{suffix}"
        tr.write_line(line, green=(verdict == "PASS"), red=(verdict != "PASS"))
