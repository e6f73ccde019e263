import numpy as np
import pytest
from scipy.stats import multivariate_normal

from wsbart import _kernels as K
from wsbart.soft_tree import SoftTree


def random_tree(rng, n_features=2, max_leaves=3, tau=None, max_depth=4):
    """Random soft tree grown by splitting random leaves."""
    tree = SoftTree.leaf(rng.standard_normal(), max_depth=max_depth)
    target = rng.integers(1, max_leaves + 1)
    while tree.n_leaves < target:
        leaves = [i for i in tree.leaves if 2 * i + 2 < tree.kind.size]
        if not leaves:
            break
        node = int(rng.choice(leaves))
        t = float(rng.uniform(0.05, 1.0)) if tau is None else tau
        tree = tree.split(node, int(rng.integers(n_features)), float(rng.random()), t,
                          rng.standard_normal(), rng.standard_normal())
    return tree


def dense_oracle(phi, R, W, sigma, sigma_mu, m):
    """log N(R | 0, Phi Phi' sigma_mu^2/m + diag(sigma^2/W)), plus the constant
    that turns the heteroscedastic Gaussian into the replication-form likelihood
    prod_i N(R_i | ., sigma^2)^{W_i}."""
    cov = phi @ phi.T * (sigma_mu**2 / m) + np.diag(sigma**2 / W)
    val = multivariate_normal(np.zeros(R.size), cov).logpdf(R)
    const = np.sum(-W / 2 * np.log(2 * np.pi * sigma**2) + 0.5 * np.log(2 * np.pi * sigma**2 / W))
    return val + const


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def hard_leaf(tree: SoftTree, x) -> int:
    """Leaf reached by deterministic routing (right when x > c)."""
    i = 0
    while tree.kind[i] == K.BRANCH:
        i = 2 * i + 2 if x[tree.var[i]] > tree.cut[i] else 2 * i + 1
    return i


ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: call with (passed, detail)."""
    name = request.node.name

    def record(passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip()
        ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
