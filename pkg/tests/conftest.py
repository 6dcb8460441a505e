"""Shared fixtures. The `desk` fixture runs the full desk-scale protocol once
per session (several minutes of CPU); only tests that request it pay for it.
"""

from __future__ import annotations

import pytest

from winoforms.experiment import run_desk_experiment


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    log: list[str] = []

    def progress(msg: str) -> None:
        log.append(msg)
        print(f"[desk] {msg}", flush=True)

    summary = run_desk_experiment(str(out), progress=progress)
    summary["log"] = log
    return summary
