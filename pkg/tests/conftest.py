import numpy as np

from leakchain.nn_core import forward

ACCEPTANCE_CRITERIA = {
    "c01": "exact bound-chain verification on random pipelines",
    "c02": "xor witness: local constraints do not compose",
    "c03": "cumulative bound closed form and sensitivity",
    "c04": "variational MI estimator accuracy",
    "c05": "gradients match finite differences",
    "c06": "reference-table formula reproduction",
    "c07": "regularization halves decodable leakage",
    "c08": "depth amplification trend",
    "c09": "monotone beta trade-off",
    "c10": "byte-identical reruns",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_c" not in nodeid:
                continue
            tag = nodeid.split("::test_")[1][:3]
            ok = status == "passed"
            outcomes[tag] = outcomes.get(tag, True) and ok
    if not outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for tag in sorted(ACCEPTANCE_CRITERIA):
        if tag in outcomes:
            verdict = "PASS" if outcomes[tag] else "FAIL"
            terminalreporter.write_line(
                f"criterion {tag[1:]:>2} {verdict}  "
                f"{ACCEPTANCE_CRITERIA[tag]}"
            )


def kink_safe_rows(net, candidates: np.ndarray, margin: float = 0.05,
                   want: int = 8) -> np.ndarray:
    """Rows whose hidden pre-activations all sit at least ``margin`` from 0.

    Central finite differences are only valid away from the rectifier kinks;
    a parameter nudge of h shifts pre-activations by O(h), so a margin of
    thousands of h keeps the numeric gradient exact.
    """
    _, (_, preacts) = forward(net, candidates)
    hidden = preacts[:-1]
    ok = np.ones(len(candidates), dtype=bool)
    for z in hidden:
        ok &= np.abs(z).min(axis=1) > margin
    rows = candidates[ok][:want]
    if len(rows) < want:
        raise AssertionError(
            f"only {len(rows)} kink-safe rows among {len(candidates)}"
        )
    return rows
