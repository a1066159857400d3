"""Positive scalar curvature metrics on spheres and tori converging in distance to conformal metrics."""

from .assembly import (AssembledMetric, BlockMetric, BilinearForm, LemmaCertificate, assemble, build_block,
                       check_assembled_properties, check_block_properties, check_lemma_properties,
                       normalize_conformal_factor)
from .config import ExperimentConfig, load_config, validate_config
from .curvature import AnsatzMetric, CurvatureReport, sectional_curvatures, verify_bound_table
from .distance import (ConvergenceReport, DistanceCertificate, GeodesicMesh, constructive_upper_bound,
                       convergence_report, lower_bound, modulus_delta)
from .errors import (CertificateError, ConfigError, ConstructionError, DimensionError, DomainError,
                     OracleError, PackingError, ParameterError, PreconditionError, PSCError)
from .fd import fd_curvature
from .geometry import FlatTorus, Sphere
from .packing import GreatCircle, PackedAtlas, TubeChart, build_atlas, circle_distance, pack_balls
from .profiles import (BetaProfile, ConformalFactor, CutoffPhi, WarpProfile, ZoneLayout, build_beta,
                       build_warp_profile, constant_factor, cosine_factor, epsilon0, hat_alpha_sphere,
                       hat_alpha_torus, linear_factor, make_eta, tabulated_factor)

__version__ = "0.1.0"
