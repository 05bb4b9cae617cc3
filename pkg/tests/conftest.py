import numpy as np
import pytest

from follicle_hmp import Control, Ensemble, table1
from follicle_hmp.dynamics import Particle

# frozen reference values (closed form, cross-checked by adaptive quadrature of dy / (a + b u))
T_HAT0 = 1.1609095769128115          # exit from y0 = 0 under u = w
T_EXIT_ONE = 0.3400975049472881      # exit from y0 = 0 under u = 1
YBAR = 12.081382302676825            # positive root of a + b
J_CS7 = -40865.139898671936          # J(bang_bang(T_HAT0)), one unit mass at zero, cs = 7
J_CS1 = -38.57387338162803           # same with cs = 1


@pytest.fixture
def p7():
    return table1(7.0)


@pytest.fixture
def p1():
    return table1(1.0)


@pytest.fixture
def single7(p7):
    return Ensemble.single(p7)


@pytest.fixture
def two_masses():
    def make(cs=0.8, **kw):
        p = table1(cs).replace(**kw) if kw else table1(cs)
        return Ensemble([Particle(0.0, 0.0, 1.0), Particle(0.0, 3.0, 1.0)], p)
    return make


def random_instance(rng, n_max=10, max_segments=6, cs=None):
    """Random ensemble and step control for oracle comparisons."""
    p = table1(float(rng.uniform(0.0, 8.0)) if cs is None else cs)
    n = int(rng.integers(1, n_max + 1))
    y0 = np.sort(rng.choice(np.linspace(0.0, p.ys, 601)[:-1], n, replace=False))
    ens = Ensemble([Particle(float(rng.uniform()), float(y), float(rng.uniform(0.1, 2.0))) for y in y0], p)
    k = int(rng.integers(0, max_segments))
    times = np.sort(rng.uniform(p.t0 + 1e-3, 4.0, k))
    times = np.unique(times)
    values = rng.uniform(p.w, 1.0, len(times) + 1)
    return ens, Control(tuple(times), tuple(values), p.t0, p.t1)
