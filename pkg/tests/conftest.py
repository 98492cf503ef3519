import numpy as np
import pytest

from adiapump.model import (
    DrivenPumpModel,
    DrivenValue,
    LatticeGeometry,
    ParameterPath,
    PumpHopping,
    demo_model,
)


@pytest.fixture(scope="session")
def demo():
    return demo_model()


def make_chain_model(n_leads=2, lead_length=60, path=None, couplings=-1.0, onsite=2.0,
                     hopping=-1.0, pump_sites=2, attach=None):
    """Small helper: uniform pump block with optional complex internal hopping."""
    attach = attach or tuple(range(min(n_leads, pump_sites)))
    geom = LatticeGeometry(n_leads, pump_sites, lead_length, tuple(attach))
    path = path or ParameterPath.static((0.0,))
    hops = tuple(PumpHopping((p, p + 1), DrivenValue(hopping)) for p in range(pump_sites - 1))
    return DrivenPumpModel(
        geom, path,
        onsite=tuple(DrivenValue(onsite) for _ in range(pump_sites)),
        hoppings=hops,
        couplings=tuple(DrivenValue(couplings) for _ in range(n_leads)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
