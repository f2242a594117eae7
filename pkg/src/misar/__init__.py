"""Sparse-MIMO FMCW 3D ISAR toolkit: echo simulation, array calibration,
target tracking, back-projection imaging and point-spread analysis."""

from .arraygeom import ArrayGeometry, LayoutMode, build_default_geometry, virtual_channels
from .calib import CalibrationSolution, ScanGrid, compensate, estimate
from .errors import (ConfigError, CoverageError, DataFormatError, MisarError, NumericalError,
                     StageError)
from .imaging import Image3D, ImagingOptions, VoxelGrid, backproject, backproject_parallel
from .simulator import ChannelErrorModel, RawDataCube, Scene, Trajectory, simulate_collection
from .waveform import ChirpParams

__version__ = "0.1.0"
