"""Spatial models for point, areal, and mixed data via set distances.

A Gaussian random field is defined over arbitrary closed sets (points,
polygons, or both) by letting the correlation between two sites depend on
the worst-case travel distance between them. The same machinery covers
classical geostatistics (where that distance reduces to the Euclidean
one), areal disease-mapping models, and mixtures of the two, with
Bayesian fitting, adjacency-based baselines, WAIC comparison, and
prediction onto new partitions of a region.
"""

from .carmodels import IcarStructure, bym2_covariance, icar_structure, leroux_precision
from .covariance import (
    CorrelationModel,
    CovarianceSpec,
    chol_with_jitter,
    correlation_matrix,
    gp_loglik,
    rho,
)
from .distances import (
    DistanceMatrix,
    border_distance,
    cross_distance_matrix,
    directed_hausdorff,
    distance_matrix,
    hausdorff,
    integrated_distance,
    read_distance_csv,
    write_distance_csv,
)
from .errors import (
    ComparisonMismatchError,
    GeometryError,
    HgpError,
    NotPositiveDefiniteError,
    ParseError,
    PredictionUnsupportedError,
    SamplerInitError,
)
from .geometry import (
    AdjacencyMatrix,
    Geom,
    GeometrySet,
    MultiPolygon,
    Point,
    Polygon,
    derive_adjacency,
    format_wkt,
    parse_geojson,
    parse_wkt,
    point_in_geom,
)
from .inference import (
    McmcSettings,
    ModelSpec,
    PosteriorSamples,
    PriorSet,
    compare,
    derive_phi_prior,
    ess,
    fit,
    hpd,
    predict,
    summary,
    waic,
)

__version__ = "0.1.0"
