import os
import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

torch.set_num_threads(max(1, int(os.environ.get("BYTELAB_THREADS", "1"))))

# criterion id -> (passed, detail); passed is None for report-only entries
VERDICTS: dict[str, tuple[bool | None, str]] = {}


@pytest.fixture(scope="session")
def natural_text(tmp_path_factory) -> bytes:
    """>= 10 MB of English text: $BYTELAB_CORPUS if set, else prose harvested from local docs."""
    from bytelab.corpus import harvest_local_text

    path = os.environ.get("BYTELAB_CORPUS")
    if path:
        return Path(path).read_bytes()
    return harvest_local_text(16_000_000)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(VERDICTS, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        ok, detail = VERDICTS[key]
        status = "REPORT" if ok is None else "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {key}: {status}  {detail}")
