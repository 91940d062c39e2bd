import math

import numpy as np
import pytest

from fivebar import model

CASE1 = model.FiveBarDesign(
    a_x=0.259, a_y=0.586, b_x=0.060, b_y=0.590,
    l1=0.465, l2=0.349, l3=0.249, l4=0.411, p=0.049, q=0.328,
)
CASE2 = model.FiveBarDesign(
    a_x=0.066, a_y=0.815, b_x=-0.642, b_y=0.845,
    l1=0.775, l2=0.832, l3=0.291, l4=0.522, p=0.298, q=1.304,
)


@pytest.fixture(scope="session")
def case1():
    return model.canonicalize(CASE1)


@pytest.fixture(scope="session")
def case2():
    return model.canonicalize(CASE2)


@pytest.fixture(scope="session")
def symmetric():
    """Symmetric fixture with closed-form intersections: P coincides with F."""
    return model.CanonicalDesign(
        b_x=2.0, l1=1.0, l2=math.sqrt(2.0), l3=1.0, l4=math.sqrt(2.0),
        p=math.sqrt(2.0), q=0.0,
    )


def random_design(rng, require_workspace=True):
    """A random valid design whose configuration space is nonempty."""
    for _ in range(100):
        lengths = rng.uniform(0.3, 1.2, size=4)
        bx, by = rng.uniform(-0.9, 0.9, size=2)
        if math.hypot(bx, by) < 0.25:
            continue
        rho = rng.uniform(0.3, 1.0)
        ang = rng.uniform(0.0, 2.0 * math.pi)
        design = model.FiveBarDesign(
            a_x=0.0, a_y=0.0, b_x=bx, b_y=by,
            l1=lengths[0], l2=lengths[1], l3=lengths[2], l4=lengths[3],
            p=rho * math.cos(ang), q=rho * math.sin(ang),
        )
        d = model.canonicalize(design)
        if not require_workspace:
            return d
        phi = rng.uniform(0, 2 * np.pi, 400)
        psi = rng.uniform(0, 2 * np.pi, 400)
        Z, sigma, parent, tang = model.fk_batch(d, phi, psi)
        if Z.shape[0] >= 160:
            return d
    raise RuntimeError("could not draw a random workable design")


def fk_cloud(d, n, seed=0):
    """Random configurations generated through the forward kinematics."""
    rng = np.random.default_rng(seed)
    Z, sigma, parent, tang = model.fk_batch(
        d, rng.uniform(0, 2 * np.pi, n), rng.uniform(0, 2 * np.pi, n)
    )
    return Z, sigma
