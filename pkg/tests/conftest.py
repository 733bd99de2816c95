import numpy as np
import pytest

from irsdeploy.composite import ChannelSet
from irsdeploy.scenario import LinkToggles, Side


def cn(rng, *shape):
    """i.i.d. CN(0, 1) entries."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_channel_set(rng, m=4, n_users=2, sizes=(4, 4), sides=(Side.BS, Side.USER),
                       paths=LinkToggles(), scale=1e-4, mask=None):
    """Gaussian realization with every coverage flag on unless ``mask`` says otherwise."""
    n_irs = len(sizes)
    user_mask = np.ones((n_irs, n_users), dtype=bool) if mask is None else np.asarray(mask)
    irs_user = []
    for i, n in enumerate(sizes):
        r = cn(rng, n, n_users)
        r[:, ~user_mask[i]] = 0
        irs_user.append(r)
    irs_irs = {(i, j): cn(rng, sizes[i], sizes[j])
               for i in range(n_irs) for j in range(n_irs)
               if sides[i] is Side.BS and sides[j] is Side.USER}
    return ChannelSet(direct=scale * cn(rng, m, n_users),
                      bs_irs=tuple(cn(rng, m, n) for n in sizes),
                      irs_user=tuple(irs_user), irs_irs=irs_irs, sides=tuple(sides),
                      user_mask=user_mask, paths=paths)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_cell(rng, n_users=3):
    """Small random cell: a BS-side IRS next to the BS facing the users, an
    optional user-side IRS a few meters from one user, and ``S`` subsurfaces.

    Returns ``(scenario, allocation counts, S)``.
    """
    from irsdeploy.scenario import IrsSpec, Position, Scenario

    users = tuple(Position(float(rng.uniform(20, 120)), float(rng.uniform(-60, 60)), 0.0)
                  for _ in range(n_users))
    angle = rng.uniform(-np.pi / 3, np.pi / 3)
    irs = [IrsSpec("A", Position(0.0, 4.0, 0.0), (float(np.cos(angle)), float(np.sin(angle)), 0.0),
                   0, 0, Side.BS)]
    n_sub = int(rng.integers(1, 7))
    counts = [n_sub * int(rng.integers(1, 4))]
    if rng.random() < 0.7:
        host = users[int(rng.integers(n_users))]
        phi = rng.uniform(0, 2 * np.pi)
        pos = Position(host.x + 3 * np.cos(phi), host.y + 3 * np.sin(phi), 0.0)
        normal = np.subtract(host, pos) / 3.0
        irs.append(IrsSpec("B", pos, tuple(float(v) for v in normal), 0, 0, Side.USER))
        counts.append(int(rng.integers(2, 9)))
    sc = Scenario(Position(0.0, 0.0, 0.0), int(rng.integers(2, 7)), users, tuple(irs))
    sc = sc.with_element_counts(counts)
    return sc, tuple(counts), n_sub
