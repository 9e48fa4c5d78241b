"""Behavioral switching-loss modeling of full-bridge SiC MOSFET power modules.

Analytical thermal-iterated loss simulation, expression trees with a
complexity score, Levenberg-Marquardt coefficient fitting, NSGA-II selection
and a multi-run genetic programming engine.
"""
from .device_model import DeviceParams, GateDriveCondition, load_device_params, reference_device
from .inverter_loss import LossBreakdown, OperatingPoint, total_loss
from .dataset import GridSpec, TrainingSet, expand_grid, generate_training_set, \
    load_training_set, save_training_set, reference_grid
from .expression import Expr, canonicalize, complexity, evaluate, parse, reference_model, \
    serialize
from .fitting import fit_all, fit_coefficient_surface, lls_polyfit, nlls_fit, percent_errors, \
    rmse
from .pareto import crowding_distance, dominates, filter_candidates, non_dominated_sort
from .gp_engine import ModelArchive, RunConfig, evolve, multi_run

__version__ = "0.1.0"
