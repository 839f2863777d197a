"""Constructive KAM iteration for continuous or degenerate frequency maps."""

from .assumptions import (
    ConvexityFit,
    DiophantineParams,
    FrequencyMap,
    brouwer_degree,
    check_diophantine,
    degree_adaptive,
    diophantine_gamma,
    fit_weak_convexity,
)
from .errors import INFEASIBLE, ConfigError, KamError
from .frequency_matching import ParameterGrid, advance_parameter, degree_root, solve_frequency_equation
from .kam_core import (
    Generator,
    NormalForm,
    extract_normal_form,
    lie_compose,
    lie_transform,
    solve_homological,
    translate_action,
    truncate,
)
from .kam_driver import (
    RunOptions,
    RunResult,
    Schedule,
    StepReport,
    TransformationRecord,
    check_hypotheses,
    init_step0,
    kam_step,
    paper_constants,
    replay,
    replay_check,
    run_kam,
)
from .models import REGISTRY, HamiltonianFamily, get_model, solve_th3
from .series import FourierTaylorSeries, holder_seminorm, poisson_bracket

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
