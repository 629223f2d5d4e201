"""Spectral non-rigid shape correspondence toolkit.

Pipeline: triangle meshes -> Laplace-Beltrami eigenbases -> WKS descriptors
-> spectral coefficients -> regularized functional maps (spectral branch)
and soft pointwise maps in a canonical embedding frame (spatial branch) ->
consistency training, pointwise extraction, and cycle/geodesic evaluation.
"""

from .mesh import (
    TriMesh, SampleSet, MeshError, MeshParseError, DegenerateTriangleError,
    NonManifoldError, DisconnectedMeshError, load_mesh, save_obj,
    normalize_area, vertex_areas, farthest_point_sample, geodesic_distances,
)
from .spectral import (
    LaplacianPair, SpectralBasis, EigensolverError, cotan_laplacian,
    compute_basis, project, reconstruct,
)
from .descriptors import DescriptorSet, wks
from .fmap import (
    CoeffMatrix, FunctionalMap, PointMap, SingularSystemError,
    PULLBACK_ROWS, FORWARD_ROWS, solve_fmreg, loss_descriptor,
    loss_orthogonality, loss_laplacian_commutativity, loss_bijectivity,
    fmap_to_pointmap,
)
from .softmap import (
    SoftMap, AlphaSchedule, alpha_at, aligned_embedding, soft_correspondence,
    iter_soft_rows, softmap_to_fmap, feature_svd_truncate,
)
from .training import (
    Shape, FeatureModel, TrainConfig, PairOutput, TrainingDivergenceError,
    TWO_BRANCH, SPECTRAL_ONLY, SPATIAL_ONLY, SHARED_LINEAR, DIRECT_COEFFS,
    forward_pair, backward_pair, total_loss, train, finite_difference_check,
)
from .consistency import (
    TripletSample, sample_triplets, spectral_cycle_residual,
    functional_cycle_residual_on_a, spatial_cycle_deviation,
)
from .evaluation import GroundTruth, geodesic_error, accuracy_curve
from .synth import DeformSpec, make_icosphere, deform, default_collection

__version__ = "0.1.0"
