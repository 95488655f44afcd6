"""Numerical laboratory for parameter sensitivity of Fokker-Planck flows.

Simulate synchronously coupled particle systems under mismatched parameters,
measure exact empirical Wasserstein distances with dual certificates, and
check both against closed-form growth or contraction envelopes.
"""

from .errors import (CapacityError, CloudParseError, ConfigError, ConvexityError,
                     EllipticityError, ExperimentStageError, FpsensError,
                     ModelEvaluationError, OrderRangeError, QuadratureError,
                     SimulationDivergedError, SizeMismatchError,
                     UnsupportedCaseError, ValidationError)
from .model import (HypothesisConstants, LangevinModel, ParameterizedModel,
                    ProbeReport, ProbeSpec, effective_drift, probe_constants,
                    probe_langevin, spd_sqrt, von_neumann_bound)
from .gallery import (heat_model, langevin_logcosh_model, langevin_quadratic_model,
                      make_model, normalize_model_id, ou_model)
from .simulate import (CoupledEnsemble, MomentCurve, RngStreamSpec, TimeGrid,
                       simulate_coupled, simulate_langevin_coupled, step_em)
from .transport import (CertificateReport, PointCloud, TransportResult,
                        dual_feasibility_check, optimal_initial_coupling,
                        wasserstein, wasserstein_1d, wasserstein_assignment)
from .bounds import (BoundEnvelope, LangevinConstants, Theorem1Constants,
                     VacuousNoiseBoundWarning, example_p2_envelope,
                     langevin_constants, langevin_envelope,
                     langevin_p2_corrected_envelope, theorem1_constants,
                     theorem1_envelope)
from .oracle import (GaussianLaw, abs_normal_moment, coupled_gap_oracle,
                     gap_mean_variance, gaussian_norm_moment, gaussian_w2,
                     gaussian_wp_1d, ou_marginal)
from .harness import (CurveRow, ExperimentConfig, ExperimentReport, InitialSpec,
                      TolerancePolicy, VerdictTable, check_bound, config_from_dict,
                      load_config, read_curves, run_experiment, sample_initial)

__version__ = "0.1.0"
