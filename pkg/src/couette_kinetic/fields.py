"""Sampled fields tagged with their representation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ABSOLUTE = "absolute"
PERTURBATION = "perturbation"
CAFLISCH_RAW = "caflisch_raw"
REPRESENTATIONS = (ABSOLUTE, PERTURBATION, CAFLISCH_RAW)


class RepresentationError(ValueError):
    pass


@dataclass(frozen=True)
class Field:
    """Values on (spatial node, velocity node), velocity index last.

    ``absolute`` is a density F, ``perturbation`` is f with F = mu + sqrt(mu) f
    (or any field measured in the sqrt(mu)-weighted frame), and
    ``caflisch_raw`` is an unweighted component of a split remainder.
    """

    values: np.ndarray
    representation: str

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise RepresentationError(f"unknown representation {self.representation!r}")


def unwrap(x, expected: str | tuple[str, ...]) -> np.ndarray:
    """Return the raw array of x, checking the tag when x is a Field."""
    if isinstance(x, Field):
        allowed = (expected,) if isinstance(expected, str) else expected
        if x.representation not in allowed:
            raise RepresentationError(
                f"expected {' or '.join(allowed)} field, got {x.representation}"
            )
        return x.values
    return np.asarray(x, dtype=float)
