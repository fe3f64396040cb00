"""Exception types raised by conical_anchor."""


class MatrixFormatError(ValueError):
    """A matrix file or triplet list could not be ingested."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ZeroNormError(ValueError):
    """Length-square sampling was requested from an all-zero row, column or matrix."""


class SketchRankError(ValueError):
    """The sampled matrix C has fewer numerically nonzero singular values than requested."""

    def __init__(self, requested, achieved):
        self.requested = requested
        self.achieved = achieved
        super().__init__(
            f"sketch reached rank {achieved}, fewer than the requested k={requested}; "
            "lower k or increase the sample count s"
        )


class RejectionLimitError(RuntimeError):
    """The rejection sampler hit its iteration cap without accepting a draw."""

    def __init__(self, cap, acceptance_hint=None):
        self.cap = cap
        self.acceptance_hint = acceptance_hint
        msg = f"no draw accepted within {cap} consecutive rejection iterations"
        if acceptance_hint is not None:
            msg += f" (expected acceptance rate {acceptance_hint:.3g})"
        super().__init__(msg)


class VoteShortfallError(ValueError):
    """Fewer distinct indices received votes than the number of anchors requested.

    ``partial`` holds the ``n_voted`` rows that did receive votes, ranked as
    a full result would be, when the voting produced any.
    """

    def __init__(self, k, n_voted, partial=None):
        self.k = k
        self.n_voted = n_voted
        self.partial = partial
        super().__init__(
            f"requested k={k} anchors but only {n_voted} distinct indices received votes "
            f"(shortfall {k - n_voted}); increase the number of projections p"
        )


class SubproblemError(RuntimeError):
    """Wraps a failure inside one divide-step subproblem."""

    def __init__(self, t, cause):
        self.t = t
        self.cause = cause
        super().__init__(f"subproblem {t} failed: {cause}")
