"""Pervasive-backdoor generation, class-distance measurement, and hardening.

The package is organized around one pipeline: a frozen image codec
(truncated classifier encoder + trainable decoder), a per-pair perturbation
generator trained against a subject model, a feature-space distance metric
built on that generator, and an adversarial-retraining loop that enlarges
the smallest class distances. `bdharden.attacks` injects reference data
poisonings used to evaluate the loop; `bdharden.harness` holds datasets,
subject models, robustness checks, and the experiment driver/CLI.
"""

__version__ = "0.1.0"
