"""City-scale KPI estimation for 5G smart-city verticals.

A detailed single-cell packet simulator (:mod:`citykpi.cellsim`) is swept
over cell conditions; per-point KPI samples are fitted to parametric
distributions (:mod:`citykpi.distfit`) and a regression surrogate maps
conditions to distribution parameters (:mod:`citykpi.surrogate`). An urban
activity model (:mod:`citykpi.urban`) turns mobile entities into per-cell
intervals of constant conditions, and the orchestrator
(:mod:`citykpi.orchestrator`) generates packet-level KPIs city-wide.
"""

__version__ = "0.1.0"
