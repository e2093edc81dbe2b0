"""Invertible codec between finite sets of located, featured objects and continuous fields.

Objects are smeared into a density field (one unit of mass per object) and a
feature field (mass weighted by the object's feature vector). Decoding reads
the count off the density mass, recovers positions by mixture seeding plus
kernel matching, and recovers features from a Monte-Carlo Gram system.
"""

from .decode import DecodeOptions, DecodeResult, decode_batch, decode_set
from .encode import FieldSamples, ObjectSet, encode_at, encode_field
from .errors import (
    EmptyProposalError,
    InsufficientPoints,
    InvalidArgument,
    InvalidField,
    OptimizationDiverged,
    SchemaError,
    SetFieldError,
    UnsupportedOperation,
)
from .kernels import KernelSpec, gaussian_gram, kernel_matrix
from .sampling import SamplerConfig

__version__ = "0.1.0"

__all__ = [
    "DecodeOptions", "DecodeResult", "decode_batch", "decode_set",
    "FieldSamples", "ObjectSet", "encode_at", "encode_field",
    "EmptyProposalError", "InsufficientPoints", "InvalidArgument", "InvalidField",
    "OptimizationDiverged", "SchemaError", "SetFieldError", "UnsupportedOperation",
    "KernelSpec", "gaussian_gram", "kernel_matrix", "SamplerConfig",
]
