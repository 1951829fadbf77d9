"""Exception types raised across the package."""


class AesError(Exception):
    """Base class for all errors raised by aesplan."""


class EmptyInput(AesError, ValueError):
    pass


class ShapeError(AesError, ValueError):
    pass


class DegenerateGeometry(AesError, ValueError):
    pass


class OutOfBounds(AesError, IndexError):
    pass


class Unreachable(AesError):
    pass


class LimitViolation(AesError):
    """IK found a solution but it leaves the joint limits.

    ``joints`` names the offending joints, ``config`` is the solution.
    """

    def __init__(self, joints, config=None):
        self.joints = tuple(joints)
        self.config = config
        super().__init__("joint limits violated: " + ", ".join(self.joints))


class NoValidTarget(AesError):
    pass


class DivergenceError(AesError, FloatingPointError):
    def __init__(self, epoch, message="loss became non-finite"):
        self.epoch = epoch
        super().__init__(f"{message} at epoch {epoch}")


class DegenerateSamples(AesError, ValueError):
    pass


class PlanningFailed(AesError):
    """STOMP could not find a feasible trajectory.

    Carries the best (infeasible) trajectory and its worst penetration depth.
    """

    def __init__(self, trajectory, max_penetration, reason="collision"):
        self.trajectory = trajectory
        self.max_penetration = float(max_penetration)
        self.reason = reason
        super().__init__(f"planning failed ({reason}), max penetration {self.max_penetration:.4f} m")


class PoseRejected(AesError):
    def __init__(self, fitness, threshold):
        self.fitness = float(fitness)
        self.threshold = float(threshold)
        super().__init__(f"truck pose rejected: fitness {fitness:.4f} m > {threshold:.4f} m")


class ConfigError(AesError, ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
