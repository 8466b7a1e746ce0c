"""Severity tables for the corruption suite.

Each kind maps severity 1..5 to a single parameter that grows with severity.
Coordinates are assumed to live roughly in the unit cube.

==================== ======================================================
kind                 parameter at severity 1..5
==================== ======================================================
rotate               max rotation angle per axis, degrees
shear                max |off-diagonal| shear entry
scale                max per-axis stretch a; factors drawn from [1/(1+a), 1+a]
jitter_uniform       half-width of uniform per-coordinate noise
jitter_gaussian      standard deviation of Gaussian per-coordinate noise
impulse              fraction of points relocated uniformly in the unit cube
upsample_background  extra uniform points in the unit cube, as a fraction of N
dropout_global       fraction of points removed uniformly at random
dropout_local        number of nearest-neighbour patches removed
density_dec          number of patches whose density is halved
cutout               side length of the removed axis-aligned box
==================== ======================================================
"""

SEVERITY_LEVELS = (1, 2, 3, 4, 5)

SEVERITY_TABLE: dict[str, tuple[float, ...]] = {
    "rotate": (6.0, 12.0, 18.0, 24.0, 30.0),
    "shear": (0.05, 0.1, 0.15, 0.2, 0.25),
    "scale": (0.1, 0.2, 0.3, 0.4, 0.5),
    "jitter_uniform": (0.01, 0.02, 0.03, 0.04, 0.05),
    "jitter_gaussian": (0.01, 0.015, 0.02, 0.025, 0.03),
    "impulse": (0.025, 0.05, 0.075, 0.1, 0.125),
    "upsample_background": (0.05, 0.1, 0.15, 0.2, 0.25),
    "dropout_global": (0.25, 0.375, 0.5, 0.625, 0.75),
    "dropout_local": (1, 2, 3, 4, 5),
    "density_dec": (1, 2, 3, 4, 5),
    "cutout": (0.15, 0.2, 0.25, 0.3, 0.35),
}

CORRUPTION_KINDS = tuple(SEVERITY_TABLE)

# patch size for dropout_local / density_dec, as a fraction of N
PATCH_FRACTION = 0.08
# fraction of a density_dec patch that is removed
DENSITY_DEC_DROP = 0.5
# no count-reducing corruption may leave fewer points than this
MIN_POINTS = 4


def severity_param(kind: str, severity: int) -> float:
    if kind not in SEVERITY_TABLE:
        raise ValueError(f"unknown corruption kind {kind!r}")
    if severity not in SEVERITY_LEVELS:
        raise ValueError(f"severity must be in 1..5, got {severity}")
    return SEVERITY_TABLE[kind][severity - 1]
