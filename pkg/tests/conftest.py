import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(**kw):
    """Small networks and few epochs so full pipeline runs take seconds."""
    from gluconet.distill import KdConfig
    from gluconet.models import BaselineConfig, LowFreqConfig, TransformerConfig
    from gluconet.pipeline import ExperimentConfig

    base = dict(
        low=LowFreqConfig(lstm_vec=((8, 4),), conv_widths=(4, 4, 4), fc_hidden=4),
        teacher=TransformerConfig(d_model=8, heads=2, ff_dim=16, role="teacher"),
        student=TransformerConfig(d_model=4, heads=2, ff_dim=8),
        baseline=BaselineConfig(conv_widths=(4, 8), lstm=(8, 4), fc=(4,)),
        epochs_low=2, epochs_teacher=2, kd=KdConfig(epochs=2), runs=1, batch_size=64,
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="session")
def small_patient():
    from gluconet.dataio import SynthConfig, generate_synthetic
    from gluconet.pipeline import patient_from_record

    return patient_from_record(generate_synthetic(SynthConfig(days=2, seed=11)))


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance(request):
    """``acceptance(n, ok, detail)`` records one criterion's verdict."""
    results = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(n: int, ok: bool, detail: str):
        results[n] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
