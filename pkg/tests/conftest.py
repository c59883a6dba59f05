from __future__ import annotations

import pytest

from gas_spiketime.circuit import CircuitParams, ComparatorParams, DifferentiatorParams, IntegratorParams


@pytest.fixture(scope="session")
def ramp_params() -> CircuitParams:
    """Noise-free settings with an ideal differentiator (no parasitic lag)."""
    diff = DifferentiatorParams(tau_d=1.0, tau_parasitic=0.0, v_rail=4.5)
    integ = IntegratorParams(tau_in=0.2, tau_leak=10.0, tau_reset=2e-3, v_rail=4.5)
    return CircuitParams(
        diff=diff,
        cd_cmp=ComparatorParams(0.05, polarity="below"),
        integ=integ,
        em_cmp=ComparatorParams(0.25, polarity="above"),
        solver_step=1e-3,
    )
