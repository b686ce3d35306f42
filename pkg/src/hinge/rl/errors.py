
class HingeError(Exception):
    pass


class KinematicsError(HingeError):
    pass


class EnvDomainError(HingeError):
    pass


class SimulationError(HingeError):
    pass


class EpisodeFinishedError(SimulationError):
    pass


class NetworkError(HingeError):
    pass


class CheckpointError(HingeError):
    pass


class TrainingError(HingeError):
    pass


class ConfigurationError(HingeError):
    pass


class ExperimentError(HingeError):
    pass
