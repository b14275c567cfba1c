"""Matrix logistic regression for link prediction.

A random graph on n vertices is generated from per-vertex features
X_i in R^d and a symmetric parameter matrix: each observed pair (i, j)
carries an edge with probability sigmoid(X_i' Theta X_j).  The package
implements the generative model, exact likelihood machinery, three
estimators (exhaustive penalized MLE, rank-constrained MLE, logistic
Lasso), design-conditioning diagnostics, packing-based lower-bound
constructions, and planted-dense-subgraph detection experiments.
"""

__version__ = "0.1.0"

from .model import (
    FeatureMatrix,
    ParameterMatrix,
    ObservationMask,
    AffinityMatrix,
    EdgeObservations,
    sigmoid,
    logit,
    build_parameter,
    affinity,
    edge_probabilities,
    sample_observations,
)
