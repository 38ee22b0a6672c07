import pytest

from moe_offload.core import GateRecord, LayerRecord, ModelSpec, TokenTrace
from moe_offload.workload import SynthConfig, generate_trace


def make_token(index, layer_scores, k=2, dim=4, activation=None):
    """Hand-built token; activations default to a fixed ramp."""
    layers = []
    for scores in layer_scores:
        act = activation or tuple(float(i + 1) for i in range(dim))
        layers.append(LayerRecord(tuple(act), GateRecord.from_scores(scores, k)))
    return TokenTrace(index, tuple(layers))


@pytest.fixture(scope="session")
def small_spec():
    return ModelSpec(num_layers=4, experts_per_layer=8, top_k=2, hidden_dim=16)


@pytest.fixture(scope="session")
def small_workload(small_spec):
    cfg = SynthConfig(spec=small_spec, tokens=200, residual_drift=0.3)
    traces, gates = generate_trace(cfg)
    return cfg, traces, gates


ACCEPTANCE_LINES: list[str] = []


def _criterion_key(line):
    label = line.split()[1]
    digits = "".join(ch for ch in label if ch.isdigit())
    return int(digits), label


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=_criterion_key):
            terminalreporter.write_line(line)
