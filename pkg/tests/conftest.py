import math

import numpy as np
import pytest

from obsdenoise.sensor import NoiseConfig, observe_distance


class ScanTable:
    """Brute-force 1 mm scan of the distance quantizer over (0, limit]."""

    def __init__(self, limit=70.0, cfg=NoiseConfig()):
        self.d = np.arange(1, int(round(limit * 1000)) + 1) / 1000.0
        self.q = observe_distance(self.d, cfg)
        values, first = np.unique(self.q, return_index=True)
        last = np.r_[first[1:] - 1, len(self.d) - 1]
        self.cells = {float(v): (float(self.d[a]), float(self.d[b])) for v, a, b in zip(values, first, last)}

    def cell(self, dq):
        return self.cells[float(dq)]

    def width(self, dq):
        lo, hi = self.cell(dq)
        return hi - lo

    def radial_radius(self, d):
        """Largest |true - reading| inside the cell containing ``d`` (plus 1 mm scan slack)."""
        dq = float(observe_distance(d))
        lo, hi = self.cell(dq)
        lo = 0.0 if dq == 0 else lo
        return max(dq - lo, hi - dq) + 1e-3

    def position_radius(self, d):
        """Radial radius plus the arc swept by a half-degree bearing error."""
        r = self.radial_radius(d)
        return r + (float(observe_distance(d)) + r) * math.radians(0.5)


@pytest.fixture(scope="session")
def scan():
    return ScanTable()


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict line; printed in the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        request.config.stash.setdefault(ACCEPTANCE, []).append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
