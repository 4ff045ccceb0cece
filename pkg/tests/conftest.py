import time
from dataclasses import dataclass

import pytest

from sead.kernel import KernelParams, default_arch, init_params
from sead.lut import RuleTable, extract_rule_table
from sead.tasks import get_task
from sead.trainer import TrainReport, default_config, train

ACCEPTANCE: list[tuple[str, bool, str]] = []


@dataclass
class Trained:
    params: KernelParams
    report: TrainReport
    table: RuleTable
    margin: float
    seconds: float


_CACHE: dict[str, Trained] = {}


def trained_model(task: str) -> Trained:
    """Default-config model for ``task``, trained once per session."""
    if task not in _CACHE:
        t0 = time.perf_counter()
        params, report = train(init_params(default_arch(task), seed=0), get_task(task), default_config(task))
        table, margin = extract_rule_table(params)
        _CACHE[task] = Trained(params, report, table, margin, time.perf_counter() - t0)
    return _CACHE[task]


@pytest.fixture(scope="session")
def models():
    return {name: trained_model(name) for name in ("parity", "addition", "rule110")}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
