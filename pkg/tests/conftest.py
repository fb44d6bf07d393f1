from __future__ import annotations

import pytest

from riskselect.scenario import Template, scenario_suite


@pytest.fixture(scope="session")
def occluded_suite():
    """The seeded 20-scenario blind-corner suite used by the policy comparisons."""
    return scenario_suite(Template.OCCLUDED_CROSSING, 0, 20, 3)
