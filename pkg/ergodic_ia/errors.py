class SimulationError(Exception):
    """Base class for simulator errors"""


class ConfigurationError(SimulationError, ValueError):
    """Invalid system, quantizer or run configuration"""


class DegenerateDrawError(SimulationError):
    """A measure-zero channel draw made a division or solve unsafe.

    Raised inside an episode; the harness counts it as an abort and
    resamples the episode.
    """

    def __init__(self, reason: str, **context):
        self.reason = reason
        self.context = context
        super().__init__(reason)


class SingularCovarianceError(SimulationError, ValueError):
    """Noise covariance of an observation model is not positive definite"""


class InsufficientEpisodesError(SimulationError, ValueError):
    """Too few episodes or SNR points for a slope estimate"""


class FeedbackCausalityError(SimulationError):
    """A transmitter used feedback before the link delivered it"""


class TransmitterBlindnessError(SimulationError):
    """A transmitter computation referenced channel state it cannot know"""
