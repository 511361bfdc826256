"""Finite-time hyperbolic splittings, rectangles and entropy estimators
for surface diffeomorphisms."""

from .cocycle import (
    FieldSample,
    LyapunovEstimate,
    birkhoff_lambda_plus,
    finite_time_fields,
    holangle_check,
    lyapunov_qr,
)
from .cover import CoverFamily, CoverParams, build_cover, cut, subdivide, verify_cover
from .entropy import (
    EntropyReport,
    SexBoundProbe,
    bowen_ball_member,
    max_separated,
    newhouse_estimate,
    power_inclusion_check,
    separation_rate,
    sex_bound_report,
)
from .errors import (
    ChartError,
    ConfigError,
    CoverError,
    DegenerateSplitError,
    EscapeError,
    FtdynError,
    PreconditionError,
    SingularMatrixError,
)
from .hypersets import (
    HypParams,
    KSequence,
    MembershipReport,
    count_admitting,
    floor_plus,
    k_sequence,
    lemma_com_bound,
    membership,
    shannon_H,
)
from .linalg2 import (
    HyperbolicSplit,
    NormDefect,
    frobenius_defect_pair,
    hyperbolic_split,
    norm_product_defect,
    svd2,
)
from .manifolds import LocalFrame, ManifoldCurve, trace_manifold
from .rectangles import (
    AdmissibleChart,
    PredicateReport,
    RegularityReport,
    build_chart,
    check_predicates,
    check_regularity,
    saturate,
)
from .systems import (
    DerivativeBounds,
    OrbitData,
    Point2,
    SurfaceSystem,
    SystemSpec,
    cat_map,
    henon,
    identity_map,
    make_system,
    orbit,
    perturbed_cat,
    rescaled_local_map,
    rescaling_eps,
    standard_map,
    step,
)

__version__ = "0.1.0"
