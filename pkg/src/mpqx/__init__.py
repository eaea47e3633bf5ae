"""mpqx: layer-wise mixed-precision quantization search with hardware-aware
latency proxies, bit-exact sub-byte kernel emulation, and C deployment."""

__version__ = "0.1.0"

from .errors import (
    EvaluationAborted,
    InfeasibleConstraintError,
    MpqxError,
    ValidationError,
)
from .model_ir import NetworkIR, QuantScheme, load_network, save_network, scheme_uniform
