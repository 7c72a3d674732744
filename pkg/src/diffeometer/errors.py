"""Exception types shared across the package.

The CLI maps these onto exit codes: ParameterError -> 2 (usage),
ProtocolError -> 3 (data/protocol), DegeneratePredictorError -> 4.
"""


class ParameterError(ValueError):
    """Invalid parameter combination or out-of-domain argument."""


class ProtocolError(RuntimeError):
    """Probe file-exchange protocol violation (missing/tampered/ill-shaped files)."""


class DegeneratePredictorError(RuntimeError):
    """Predictor is constant over the probe set; stability ratios are undefined."""
