import json
import math

import numpy as np
import pytest
from hypothesis import settings

from handlesurgery.geometry import SplitPoint
from handlesurgery.handle import HandleParams

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

TWO_CHORD_ATLAS = {
    "components": ["L1"],
    "action_cap": 2.5,
    "dimension": 3,
    "chords": [
        {"id": "a", "start": "L1", "end": "L1", "action": 1.0,
         "linear": [[0.8, 0.1], [-0.1, 0.7]], "offset": [0.05, -0.02]},
        {"id": "b", "start": "L1", "end": "L1", "action": 1.2,
         "linear": [[0.6, -0.2], [0.2, 0.9]], "offset": [-0.1, 0.03]},
    ],
}

# unattached component with every mixed word class below the cap
MIXED_ATLAS = {
    "components": ["L1", "L0"],
    "action_cap": 3.7,
    "dimension": 3,
    "chords": [
        {"id": "a", "start": "L0", "end": "L1", "action": 1.0,
         "linear": [[0.8, 0.1], [-0.1, 0.7]], "offset": [0.05, -0.02]},
        {"id": "b", "start": "L1", "end": "L0", "action": 1.37,
         "linear": [[0.6, -0.2], [0.2, 0.9]], "offset": [-0.1, 0.03]},
        {"id": "c", "start": "L1", "end": "L1", "action": 1.13,
         "linear": [[0.9, 0.0], [0.1, 0.5]], "offset": [0.02, 0.08]},
    ],
}


@pytest.fixture
def params():
    return HandleParams()


@pytest.fixture
def two_chord_doc():
    return json.loads(json.dumps(TWO_CHORD_ATLAS))


@pytest.fixture
def two_chord_file(tmp_path):
    path = tmp_path / "atlas.json"
    path.write_text(json.dumps(TWO_CHORD_ATLAS))
    return path


def random_surface_point(params, sign, rng, scale=1.5):
    """Point on the unflattened surface of the given sign: pick everything but y1 (or x1)."""
    n = params.n
    r = params.rates
    while True:
        x = rng.normal(scale=scale, size=n)
        y = rng.normal(scale=scale, size=n)
        # solve for y1 from sum r (2x^2 - y^2) = sign
        rest = float(np.sum(r[1:] * (2 * x[1:] ** 2 - y[1:] ** 2))) + 2 * x[0] ** 2 - sign
        if rest > 0:
            y[0] = math.copysign(math.sqrt(rest), rng.normal())
            return SplitPoint.from_xy(x, y)
