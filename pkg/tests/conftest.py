"""Shared test helpers: a compact experiment-config factory."""

from sgdlab import ExperimentConfig


def make_cfg(**overrides) -> ExperimentConfig:
    """A small, fast vSGD experiment; keyword arguments replace fields."""
    base = dict(
        problem={"kind": "quadratic", "spectrum": [1.0, 4.0]},
        oracle={"kind": "gaussian", "sigma": 0.5},
        schedule={"alpha_c": 0.5, "alpha_a": 0.6},
        method="vsgd",
        horizon=200,
        replicas=8,
        seed=1234,
        x0=[2.0, -1.0],
    )
    base.update(overrides)
    return ExperimentConfig(**base)
