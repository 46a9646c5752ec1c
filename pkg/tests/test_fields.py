import numpy as np
import pytest

from couette_kinetic.fields import ABSOLUTE, PERTURBATION, Field, RepresentationError, unwrap


def test_unwrap_checks_tags():
    f = Field(np.ones(3), PERTURBATION)
    assert unwrap(f, PERTURBATION) is f.values
    with pytest.raises(RepresentationError):
        unwrap(f, ABSOLUTE)
    assert np.array_equal(unwrap([1.0, 2.0], ABSOLUTE), [1.0, 2.0])


def test_unknown_tag_rejected():
    with pytest.raises(RepresentationError):
        Field(np.ones(2), "weighted")
