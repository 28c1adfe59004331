"""Jamming detection on cellular KPI telemetry.

Modules: ``telemetry`` (records, datasets, normalization), ``simulator``
(synthetic campaigns and poisoning), ``classifiers`` and ``temporal``
(supervised detectors), ``anomaly`` (ensemble auto-encoder), ``bnm``
(Bayesian network root-cause analysis), ``evaluation`` and ``cli``.
"""

__version__ = "0.1.0"
