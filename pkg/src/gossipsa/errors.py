"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """An experiment, scheme or problem was configured inconsistently."""


class PreconditionError(ValueError):
    """A check was requested on inputs that violate its hypotheses."""


class SingularityError(ValueError):
    """An agent estimate landed on (or numerically at) a sensor location."""

    def __init__(self, agent: int | None, sensor: int, distance: float):
        self.agent = agent
        self.sensor = sensor
        self.distance = distance
        who = "evaluation point" if agent is None else f"agent {agent}"
        super().__init__(
            f"{who} is at distance {distance:.3g} from sensor {sensor}; "
            "the signal model is singular there"
        )


class DivergenceError(RuntimeError):
    """A trajectory left the finite region: the stability condition failed."""

    def __init__(self, step: int, replica: int | None = None):
        self.step = step
        self.replica = replica
        where = "" if replica is None else f" (replica {replica})"
        super().__init__(f"iterates diverged at step {step}{where}")
