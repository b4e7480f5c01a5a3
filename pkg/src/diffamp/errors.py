"""Exception hierarchy.

Every error carries a short machine-readable ``kind`` so that sweeps can
write ``DEGENERATE:<kind>`` sentinels and the CLI can map errors to exit
codes.
"""


class DiffampError(Exception):
    kind = "error"

    def __init__(self, message, kind=None):
        super().__init__(message)
        if kind is not None:
            self.kind = kind


class ConfigError(DiffampError, ValueError):
    """Invalid or conflicting input parameters."""

    kind = "config"

    def __init__(self, message, key=None, kind=None):
        super().__init__(message, kind=kind)
        self.key = key


class ConfigMismatchError(ConfigError):
    """Two batches (or a batch and a config) cannot be combined."""

    kind = "config_mismatch"


class DegenerateError(DiffampError, ArithmeticError):
    """A structural singularity of the measurement scheme.

    Kinds used across the package:

    ``preselection``       B = 0, the DSA signal d/B is undefined
    ``balance``            B*y = 0, accepted and rejected counts balance
    ``postselection``      one sub-ensemble has zero probability
    ``bias``               biased denominator vanishes (beta = eta)
    ``weak_value``         <f|i> = 0 in quantum mode
    ``balanced_counts``    realized n1 == n2
    ``insufficient_data``  fewer than two records in a channel
    ``unidentifiable``     signal does not depend on d
    ``seed_reuse``         replicates are not independent
    ``zero_shift``         d = 0 where a ratio to d is requested
    """

    kind = "degenerate"
