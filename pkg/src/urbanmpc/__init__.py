"""Trajectory planning and control for urban driving.

An SQP / real-time-iteration model-predictive controller over a kinematic
bicycle model, with pedestrian-motion prediction translated into
time-varying half-plane constraints, a closed-loop scenario simulator, and
log/plot emission.
"""

from .vehicle import (ControlInput, Sensitivities, SteeringDomainError,
                      VehicleParams, VehicleState, eval_continuous,
                      sensitivities, step_rk4)
from .reference import (FrenetError, ReferenceCurve, ReferencePoint,
                        build_references, project, wrap_angle)
from .pedestrians import (PathGraph, PedestrianPrediction, PedestrianState,
                          PredictorConfig, assign_references, predict_all,
                          propagate)
from .qp import (OcpQp, OcpSolution, StageRows, dump_qp, kkt_residuals,
                 load_qp, solve)

__all__ = [
    "ControlInput", "Sensitivities", "SteeringDomainError", "VehicleParams",
    "VehicleState", "eval_continuous", "sensitivities", "step_rk4",
    "FrenetError", "ReferenceCurve", "ReferencePoint", "build_references",
    "project", "wrap_angle",
    "PathGraph", "PedestrianPrediction", "PedestrianState", "PredictorConfig",
    "assign_references", "predict_all", "propagate",
    "OcpQp", "OcpSolution", "StageRows", "dump_qp", "kkt_residuals",
    "load_qp", "solve",
]

__version__ = "0.1.0"
