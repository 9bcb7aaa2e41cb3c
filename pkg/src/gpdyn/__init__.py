"""GP vector fields inside structure-preserving Runge-Kutta integrators.

Learns discrete-time dynamics as sparse-GP fields embedded in (possibly
implicit, symplectic) Runge-Kutta schemes, trains them variationally with
implicit-function-theorem gradients, and verifies volume/energy/invariant
preservation on benchmark Hamiltonian systems.
"""

from .kernels import (
    ArdKernelParams,
    FeatureBasis,
    GaussianMoments,
    feature_map,
    gaussian_kl,
    gaussian_log_density,
    kernel_eval,
    kernel_matrix,
    sample_feature_basis,
)
from .sparse_gp import (
    DrawNoise,
    MultiGp,
    SampledFunction,
    SparseGp,
    draw_function,
    eval_function,
    eval_gradient,
    kl_to_prior,
    mean_function,
    posterior_moments,
)
from .integrators import (
    EXPLICIT_EULER,
    HEUN,
    IMPLICIT_MIDPOINT,
    RADAU_IA,
    TABLEAUS,
    ButcherTableau,
    NonConvergenceError,
    SolverSettings,
    StepSizeUnderflowError,
    Stepper,
    VectorField,
    integrate,
    integrate_adaptive,
    integrate_to_grid,
    implicit_midpoint_hamiltonian_step,
    rk_step,
    solve_stages,
    step_jacobian,
    symplectic_euler_step,
)
from .models import (
    ConstrainedRigidBodyModel,
    ConstraintSingularityError,
    GenericEulerModel,
    NonSeparableHamiltonianModel,
    SampledModel,
    SeparableHamiltonianModel,
    assemble_model,
    mean_model,
    sample_model,
)
from .gradients import (
    GradientReport,
    ParameterLayout,
    check_gradient,
    get_params,
    ift_stage_sensitivities,
    ift_step_jacobian,
    model_layout,
    rollout_gradient,
    set_params,
)
from .systems import (
    ExperimentConfig,
    SystemSpec,
    add_noise,
    default_experiment,
    get_system,
    init_model,
    reference_trajectory,
    system_field,
)
from .training import (
    Checkpoint,
    ModelSelectionConfig,
    TrainConfig,
    TrainingAbort,
    WindowDataset,
    elbo_window_loss,
    make_windows,
    select_model,
    train,
)
from .evaluation import (
    EnergyStats,
    MetricReport,
    RolloutEnsemble,
    determinant_series,
    energy_stats,
    l2_error,
    uncertainty_stats,
)
from .trajectory import Trajectory

__version__ = "0.1.0"
