"""Physics-informed networks for Cahn-Hilliard and Navier-Stokes-Cahn-Hilliard, with loss-to-error analysis."""

from pinnlab.netjet import Jet2, NetworkSpec, ParamVector, forward_jet, init_params, loss_grad
from pinnlab.problems import ManufacturedSolution, ProblemConfig, RectDomain

__version__ = "0.1.0"
__all__ = ["Jet2", "NetworkSpec", "ParamVector", "forward_jet", "init_params", "loss_grad",
           "ManufacturedSolution", "ProblemConfig", "RectDomain"]
