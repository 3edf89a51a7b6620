import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import batsnum
from batsnum import solvers

settings.register_profile(
    "ci", derandomize=True, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

warnings.filterwarnings("ignore", module="scipy")


class SolverCache:
    """Session-wide memo of solved cases so criteria share the work."""

    def __init__(self):
        self._scenarios = {}
        self._nap = {}
        self._two = {}
        self._up = {}
        self.wall_clock = {}

    def scenario(self, case, family="iid"):
        key = (case, family)
        if key not in self._scenarios:
            self._scenarios[key] = batsnum.load_scenario(
                f"case{case}", loss_family=family)
        return self._scenarios[key]

    def up(self, case, family="iid"):
        key = (case, family)
        if key not in self._up:
            self._up[key] = solvers.solve_up(self.scenario(case, family))
        return self._up[key]

    def nap(self, case, family="iid"):
        import time
        key = (case, family)
        if key not in self._nap:
            t0 = time.time()
            self._nap[key] = solvers.solve_nap(self.scenario(case, family))
            self.wall_clock[("nap",) + key] = time.time() - t0
        return self._nap[key]

    def two_step(self, case, family="iid"):
        import time
        key = (case, family)
        if key not in self._two:
            t0 = time.time()
            self._two[key] = solvers.two_step_solve(
                self.scenario(case, family), nap_solution=self.nap(case, family))
            self.wall_clock[("two-step",) + key] = time.time() - t0
        return self._two[key]


@pytest.fixture(scope="session")
def solved():
    return SolverCache()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
