import numpy as np
import pytest

from hcbloch.geometry import build_geometry, classify_nodes


@pytest.fixture(scope="session")
def single_fiber():
    return build_geometry(
        {
            "variant": "fibered",
            "fibers": [{"axis": 1, "rect": [0.3, 0.7, 0.3, 0.7]}],
            "a0": 1.0,
            "a1": 1.0,
        }
    )


@pytest.fixture(scope="session")
def two_fiber():
    return build_geometry(
        {
            "variant": "fibered",
            "fibers": [
                {"axis": 1, "rect": [0.1, 0.4, 0.1, 0.4]},
                {"axis": 3, "rect": [0.6, 0.9, 0.6, 0.9]},
            ],
            "a0": 1.0,
            "a1": 2.0,
        }
    )


@pytest.fixture(scope="session")
def inclusion():
    return build_geometry(
        {
            "variant": "compact_inclusion",
            "inclusion_box": [0.25, 0.75, 0.25, 0.75, 0.25, 0.75],
            "a0": 1.0,
            "a1": 1.0,
        }
    )


@pytest.fixture(scope="session")
def single_fiber_grid12(single_fiber):
    return classify_nodes(single_fiber, 12)


def dirichlet_chain_lowest(m_interior: int, h: float) -> float:
    """Lowest eigenvalue of the 1D Dirichlet chain with m interior nodes."""
    return (4.0 / h**2) * np.sin(np.pi / (2 * (m_interior + 1))) ** 2
