"""Model-based policy gradients through approximate physical models.

Gradients are taken along rollouts of the true system, with an approximate
model supplying the Jacobians, and policies embed a low-level feedback
controller so that model errors and sensitivities do not compound over long
horizons.
"""
from .diagnostics import (ErrorDecomposition, HessianEstimate, ScalingStudyConfig, ScalingStudyResult,
                          TransitionTable, error_decomposition, fit_growth, hessian_fd, hessian_scalar_lq,
                          scaling_study, spectral_norm, transition_table)
from .distributions import InitialDistribution, sample_initial_conditions
from .dynamics import (CarHiFi, DivergenceError, KinematicCar, ScalarLinear, Trajectory, Unicycle, jacobians,
                       make_model, rollout, simulate, step)
from .estimator import (GradientEstimate, QuadraticTracking, batch_gradient, finite_difference_gradient,
                        gradient_backward, gradient_forward, sensitivities_forward, tracking_reward)
from .policy import NeuralCorrection, OpenLoop, Proportional, Tracking, load_checkpoint, save_checkpoint
from .reference import Figure8, Setpoint, WaypointTable
from .trainer import RunLog, TrainingConfig, evaluate, train

__version__ = "0.1.0"
