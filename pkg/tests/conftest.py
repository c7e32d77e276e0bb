import numpy as np
import pytest

from treedamp import ProblemSpec, build_tree

# Acceptance lines collected during the run and printed in the terminal summary.
_ACCEPTANCE = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    _ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def star(q=2.0, T1=1.0, kids=(3.0, 3.0)):
    return build_tree([0] + [1] * len(kids), [T1, *kids], q)


def two_level(q, lengths):
    """Root 1; edges 2 (internal) and 3 leave v1; edges 4 and 5 leave v2."""
    return build_tree([0, 1, 1, 2, 2], lengths, q)


def random_spec(tree, seed, y0=1.0, c_scale=1.0):
    rng = np.random.default_rng(seed)
    m = tree.m
    return ProblemSpec(
        rng.uniform(-1, 1, m),
        c_scale * rng.uniform(-1, 1, m),
        rng.uniform(0.5, 1.5, m),
        y0,
    )


# Five generic instances.  For integer q every crossing and target point is a
# multiple of 1/16, so the meshes at h = 1/16, 1/32, 1/64 are nested and align
# with the delay preimages; q = 1.5 uses unaligned lengths.
INSTANCES = {
    "star-q2": lambda: star(2.0, 1.0, (3.0, 2.5)),
    "tree-q2": lambda: two_level(2.0, [0.5, 1.25, 1.5, 2.75, 3.25]),
    "star-q3": lambda: star(3.0, 0.75, (2.25, 2.625)),
    "tree-q1.5": lambda: two_level(1.5, [1.0, 1.3, 1.1, 2.0, 1.7]),
    "star-q1.5": lambda: star(1.5, 0.9, (1.4, 1.7, 1.2)),
}


def instance(name, seed=None, c_scale=1.0, y0=1.0):
    tree = INSTANCES[name]()
    if seed is None:
        seed = sorted(INSTANCES).index(name)
    return tree, random_spec(tree, seed, y0=y0, c_scale=c_scale)


@pytest.fixture(params=sorted(INSTANCES))
def generic(request):
    return instance(request.param)


@pytest.fixture
def star_tree():
    return star()


@pytest.fixture
def star_spec():
    return ProblemSpec(np.zeros(3), np.zeros(3), np.array([1.0, 0.5, 0.5]), 1.0)
