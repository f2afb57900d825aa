import numpy as np
import pytest

from cfda.funcdata import cosine_basis
from cfda.simulate import ComponentSpec, SimSpec, simulate, simulate_labeled, three_component_spec


def test_zero_variance_gives_means():
    spec = SimSpec(
        n=20, m=15, J=3, noise_sd=0.0,
        components=(ComponentSpec(0.4, (1.0, 0.5), (0.0, 0.0)), ComponentSpec(0.6, (0.0, 0.0, -2.0), (0.0,))),
    )
    sim = simulate_labeled(spec, seed=1)
    basis = cosine_basis(sim.curves.grid, 3)
    means = np.array([[1.0, 0.5, 0.0], [0.0, 0.0, -2.0]]) @ basis
    np.testing.assert_allclose(sim.curves.values, means[sim.labels], atol=1e-14)


def test_component_frequencies():
    spec = three_component_spec(n=10_000)
    labels = simulate_labeled(spec, seed=2).labels
    freq = np.bincount(labels, minlength=3) / spec.n
    se = np.sqrt(spec.weights * (1 - spec.weights) / spec.n)
    assert np.all(np.abs(freq - spec.weights) <= 3 * se)


def test_score_variances():
    spec = three_component_spec(n=10_000)
    sim = simulate_labeled(spec, seed=3)
    for k, comp in enumerate(spec.components):
        scores = sim.scores[sim.labels == k]
        np.testing.assert_allclose(scores.var(axis=0, ddof=1), comp.variances, rtol=0.10)


def test_deterministic_and_stream_dependent():
    spec = three_component_spec(n=30)
    a, b = simulate(spec, 5), simulate(spec, 5)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(simulate(spec, 5, stream=1).values, a.values)
    assert a.ids[0] == "c0"


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(components=(ComponentSpec(0.5, (0.0,), (1.0,)),)),
        dict(components=(ComponentSpec(1.0, (0.0,), (-1.0,)),)),
        dict(components=(ComponentSpec(1.0, (0.0, 0.0, 0.0), (1.0,)),)),
        dict(components=()),
        dict(components=(ComponentSpec(1.0, (0.0,), (1.0,)),), noise_sd=-0.1),
    ],
)
def test_invalid_specs(kwargs):
    base = dict(n=10, m=10, J=2)
    with pytest.raises(ValueError):
        SimSpec(**base, **kwargs)


def test_dict_roundtrip():
    spec = three_component_spec(n=50)
    assert SimSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        SimSpec.from_dict({"n": 3})
