"""C0 interior penalty finite elements for HJB equations in nondivergence form
with Cordes coefficients, Howard's algorithm, a posteriori estimation and
adaptivity, and a Monge-Ampere frontend."""

from .adapt import AdaptConfig, adaptive_loop, eoc, mark_maximum, uniform_loop
from .estimator import ErrorIndicators, compute_indicators, effectivity_index
from .forms import SchemeParams, error_norms, mesh_norm
from .mesh import Mesh, bisect_marked, build_edge_topology, square_mesh, uniform_refine
from .problem import Control, ControlProblem, ExactSolution, cordes_epsilon, gamma_of
from .solver import howard_solve
from .space import DiscreteFunction, FeSpace

__version__ = "0.1.0"
