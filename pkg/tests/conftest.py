"""Pin math-library threading to one worker before numpy loads.

float32 reductions can reassociate across thread counts; pinning keeps
training trajectories and the golden-report comparison reproducible on
any machine.
"""

import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ[_var] = "1"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the release-criteria verdicts collected by test_acceptance."""
    lines = getattr(config, "acceptance_lines", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
