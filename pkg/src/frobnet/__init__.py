"""Compile smooth and compositional functions into norm-certified ReLU networks."""
from .net_ir import (
    AugmentedNetwork,
    FrobeniusCertificate,
    Network,
    certify,
    clip,
    deserialize,
    evaluate,
    kappa,
    serialize,
    to_augmented,
)

__all__ = [
    "AugmentedNetwork",
    "FrobeniusCertificate",
    "Network",
    "certify",
    "clip",
    "deserialize",
    "evaluate",
    "kappa",
    "serialize",
    "to_augmented",
]
__version__ = "0.1.0"
