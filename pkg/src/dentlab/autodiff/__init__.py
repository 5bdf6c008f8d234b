from dentlab.autodiff.tensor import (
    ShapeMismatchException,
    Tape,
    TapeException,
    Tensor,
    backward,
    current_tape,
    default_dtype,
    float64_mode,
    grad,
    is_recording,
    no_grad,
    tape_scope,
)
from dentlab.autodiff.ops import as_tensor, forward_op
from dentlab.autodiff.functional import (
    InvalidProbabilitiesException,
    cross_entropy,
    entropy,
)
