"""Agent-based testbed for proactive contact tracing (PCT).

Subpackages / modules:

* ``pct.config``     -- dataclass configs, strict JSON loading, config hashing
* ``pct.epi``        -- disease model, contact generation, world simulation
* ``pct.tracing``    -- risk quantization, anonymous message protocol, clusters
* ``pct.predictors`` -- infectiousness predictors (rule-based, oracle, learned)
* ``pct.setnet``     -- Deep-Set risk predictor: encoding, model, training
* ``pct.pipeline``   -- scenario sampling, dataset generation, iterative retraining
* ``pct.metrics``    -- infection-tree R estimation, quarantine stats, bootstrap
* ``pct.cli``        -- ``pct`` command-line entry point
"""

__version__ = "0.1.0"
