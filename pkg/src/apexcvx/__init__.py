"""Minimum-lap-time racing line and powertrain optimization by sequential
conic programming over a quasi-steady-state vehicle model."""

from .baseline import SpeedProfile, apex_speed_profile, min_curvature_line
from .conic import (ConicProgram, ConicSolution, ProgramBuilder, SolverFailure,
                    SolverTolerances, conic_solve, dump_program)
from .energy import (EnergyScenario, PowertrainComponent, PowertrainConfig,
                     default_hybrid, run_scenarios)
from .scp import (SCPConfig, SolveReport, report_channels,
                  solve_fixed_trajectory, solve_min_lap_time)
from .track import (PathState, RibbonDerivatives, TrackRibbon, curvature,
                    curvature_gradient, differentiate_ribbon, load_track,
                    make_test_track, resample_track, save_track,
                    slope_and_banking, trajectory_derivatives)
from .transcription import (Mesh, TrajectoryIterate, TranscriptionOptions,
                            VariableLayout, build_mesh, build_subproblem,
                            extract_iterate, initial_iterate, layout_variables,
                            nonlinear_residuals)
from .vehicle import (OperatingPoint, VehicleParams, actuator_limits,
                      default_vehicle, friction_feasible, ggv_envelope,
                      load_vehicle, residual_balances, save_vehicle,
                      wheel_force_budget)

__version__ = "0.1.0"
