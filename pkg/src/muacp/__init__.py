"""Multi-uncertainty-aware cooperative lane-change planning.

Library layout:

- `dynamics`     kinematic bicycle models and linearization
- `geometry`     rectangle occupancy sets, distances, dual certificates
- `qp`           dense operator-splitting QP solver with polishing
- `uncertainty`  perception / connectivity / motion uncertainty models
- `scenario`     scenario files, validation, reference generation
- `mpc`          per-vehicle subproblem assembly and the outer loop
- `planner`      per-step orchestration and baseline modes
- `sim`          closed-loop episodes, backup policy, metrics
- `report`       figure rendering and metric tables
- `cli`          command-line entry points
"""

__version__ = "0.1.0"
