"""Record layouts and stream constants shared by ``_core`` and ``_pycore``.

Both cores must agree bit for bit, so every tag, dtype and slot count lives here.
"""

import numpy as np

MAX_LABELS = 4
MAX_TRACKERS = 4

# counter word 2 of a Philox block selects what the block is used for
TAG_ROOT = 0x726F6F74
TAG_DERIVE = 0x64657276
PURPOSE_STEP = 2
PURPOSE_BRIDGE = 3
PURPOSE_SAMPLE = 4
PURPOSE_PATH = 5

OPEN = 0
BRANCHED = 1
KILLED = 2
HORIZON = 3
END_KIND_NAMES = {
    OPEN: "open",
    BRANCHED: "branched",
    KILLED: "killed_by_pruning",
    HORIZON: "reached_horizon",
}

NODE_DTYPE = np.dtype(
    [
        ("parent", "<i8"),
        ("bit", "<i8"),
        ("birth_t", "<f8"),
        ("birth_x", "<f8"),
        ("end_t", "<f8"),
        ("end_x", "<f8"),
        ("digest", "<u8"),
        ("kind", "<i8"),
    ]
)

PARTICLE_DTYPE = np.dtype(
    [
        ("x", "<f8"),
        ("t", "<f8"),
        ("death", "<f8"),
        ("spare", "<f8"),
        ("digest", "<u8"),
        ("gcount", "<u8"),
        ("node", "<i8"),
        ("origin", "<i8"),
    ]
)
