"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so each class carries the code it
should terminate with.
"""


class HydroVisionError(Exception):
    exit_code = 3
    module = "hydrovision"

    def __str__(self):
        return f"{self.module}: {super().__str__()}"


class ConfigError(HydroVisionError):
    exit_code = 1
    module = "config"


class DataError(HydroVisionError):
    exit_code = 2
    module = "data"


class ImputationError(DataError):
    pass


class TerrainError(DataError):
    module = "terrain"


class ShapeError(HydroVisionError, ValueError):
    exit_code = 2
    module = "model"


class TrainingDiverged(HydroVisionError):
    exit_code = 3
    module = "train"
