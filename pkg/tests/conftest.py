import numpy as np
import pytest


def random_leaf_sheet(n=500, a=0.15, b=0.08, jitter=0.0015, curve=0.3, seed=3):
    """Elliptic leaf-like sheet with mild curvature, randomly sampled."""
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < n:
        xy = rng.uniform(-1, 1, (2 * n, 2))
        xy = xy[xy[:, 0] ** 2 + xy[:, 1] ** 2 <= 1]
        pts.extend(xy.tolist())
    pts = np.asarray(pts[:n])
    sheet = np.column_stack([pts[:, 0] * a, pts[:, 1] * b,
                             curve * (pts[:, 0] * a) ** 2])
    return sheet + rng.normal(0, jitter, sheet.shape)


@pytest.fixture
def leaf_sheet_500():
    return random_leaf_sheet()
