"""Joint hot-deck imputation for categorical survey variables.

Library layout:

* :mod:`jointimpute.dataset` — weighted survey data model and CSV I/O
* :mod:`jointimpute.popgen` — synthetic population generation
* :mod:`jointimpute.sampling` — sample selection and response masking
* :mod:`jointimpute.estimators` — proportion estimators and bias oracles
* :mod:`jointimpute.cube` — balanced-selection kernel (flight + landing)
* :mod:`jointimpute.imputation` — marginal, joint and balanced hot-deck
* :mod:`jointimpute.bootstrap` — replicate-weight variance estimation
* :mod:`jointimpute.harness` — Monte Carlo studies
* :mod:`jointimpute.cli` — command-line entry point
"""

__version__ = "0.1.0"

from .dataset import (
    ProportionTable,
    ResponsePattern,
    SurveyDataset,
    Unit,
    load_dataset,
    partition_by_class_and_pattern,
    pattern_of,
    save_dataset,
)
from .errors import (
    BalanceError,
    DataError,
    EstimationError,
    JointImputeError,
    NoDonorInformationError,
)
from .popgen import (
    ClassSpec,
    PopulationSpec,
    benchmark_spec,
    cell_probabilities,
    generate_population,
    odds_ratio,
)
from .rng import RngStream
from .sampling import generate_response, srswor
from .estimators import (
    aac_estimators,
    ac_estimators,
    acc_estimators,
    bias_ac,
    bias_cc,
    bias_rhdi,
    cc_estimators,
    cell_estimates,
    ht_proportions,
    imputed_proportions,
    or_plugin,
    tilde_estimators,
)
from .cube import BalancingProblem, balanced_select, flight_phase, landing_phase
from .imputation import bhdi, build_cell_populations, jhdi, jhdi3, rhdi
from .bootstrap import BootstrapConfig, bootstrap_variance, percentile_ci, rwy_weights
from .harness import (
    StudyConfig,
    relative_bias,
    relative_efficiency,
    run_point_study,
    run_variance_study,
)

__all__ = [name for name in dir() if not name.startswith("_")]
