"""Seismic RMS cubes to permeability: cube extraction and a numpy 3D CNN."""

from .data import RmsCube, TrainSample, build_training_set, extract_cube, extract_cubes, predict_map
from .net import (CUBE_SHAPE, Architecture, NumericalBlowUp, SeismicNet, forward, load_checkpoint,
                  save_checkpoint)
from .train import TrainConfig, TrainResult, grad_check, train

__all__ = [
    "CUBE_SHAPE", "Architecture", "NumericalBlowUp", "RmsCube", "SeismicNet", "TrainConfig",
    "TrainResult", "TrainSample", "build_training_set", "extract_cube", "extract_cubes",
    "forward", "grad_check", "load_checkpoint", "predict_map", "save_checkpoint", "train",
]
