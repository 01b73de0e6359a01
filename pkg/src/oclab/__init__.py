"""Worst-case instances, minimizers, adversary games and optimizers for
second-order oracle complexity experiments."""
from .core import (
    AlgorithmFault,
    Basis,
    ConditionViolated,
    DimensionExhausted,
    InvalidInput,
    NumericalFailure,
    OclabError,
    OracleReply,
    lift_from_chain,
    project_to_chain,
)
from .hard_instances import (
    ChainSpec,
    Family,
    HardInstance,
    SmoothedCubic,
    build_convex,
    build_korder,
    build_strongly_convex,
    evaluate,
    g_eval,
    kth_form,
)

__version__ = "0.1.0"
