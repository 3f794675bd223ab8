"""Session-wide audit: the perversity index never exceeds the price of anarchy.

Every instance-ratio evaluation made through the metrics module during the
whole run is logged; at session teardown any scenario evaluated on both
metrics must satisfy the ordering.
"""

import pytest

from tollgame.metrics import evaluation_log


@pytest.fixture(scope="session", autouse=True)
def audit_ratio_ordering():
    yield
    by_key: dict[str, dict[str, float]] = {}
    for entry in evaluation_log():
        if entry["key"] is not None:
            by_key.setdefault(entry["key"], {})[entry["kind"]] = entry["ratio"]
    for key, ratios in by_key.items():
        if "poa" in ratios and "pi" in ratios:
            assert ratios["pi"] <= ratios["poa"] + 1e-9, (
                f"{key}: perversity {ratios['pi']} exceeds anarchy {ratios['poa']}"
            )
