"""Shared fixtures: built-in plants and tiny synthetic systems."""

from __future__ import annotations

import logging

import numpy as np
import pytest

from fuzzy_lsmpc import datasets
from fuzzy_lsmpc.fuzzy_model import ConstantMembership, LargeScaleSystem, SubsystemRules
from fuzzy_lsmpc.lmi_synthesis import GainSet

logging.getLogger("fuzzy_lsmpc").setLevel(logging.WARNING)


def scalar_system(a=0.5, b=1.0, ad=0.0, w=0.0, gamma=1.0, h=1, u_max=1e6):
    sub = SubsystemRules(index=1, A=[[[a]]], B=[[[b]]], A_d=[[[ad]]], w=[[[w]]], f={},
                         membership=ConstantMembership([1.0]))
    return LargeScaleSystem([sub], h=h, gamma=[gamma], u_max=[[u_max]])


def gains_from(k_rules, X=None, sigma=None):
    """GainSet with the given per-subsystem rule gains and no certificate."""
    N = len(k_rules)
    n = [np.atleast_2d(np.asarray(ks[0], float)).shape[1] for ks in k_rules]
    k = tuple(tuple(np.atleast_2d(np.asarray(g, float)) for g in ks) for ks in k_rules)
    return GainSet(k=k, sigma=tuple(sigma or [1.0] * N), Z=tuple(np.zeros((m, m)) for m in n),
                   X_bar=tuple(np.zeros(m) for m in n),
                   X=None if X is None else tuple(np.asarray(x, float) for x in X))


@pytest.fixture(scope="session")
def ex1():
    return datasets.example1()


@pytest.fixture(scope="session")
def tuned():
    """Restricted Example-1 plant, tuned hyperparameters and their certified gains."""
    from fuzzy_lsmpc.lmi_synthesis import synthesize
    sys, hp = datasets.example1_tuned(gamma=1e-5)
    return sys, hp, synthesize(sys, hp)


# --- acceptance reporting -----------------------------------------------------

ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> str:
    line = f"CRITERION {number:2d}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
