"""Federated coordinated beamforming for multi-cell integrated sensing and communication."""
from .channel import Dataset, NetworkConfig, generate_dataset, load_dataset, save_dataset
from .federate import TrainConfig

__all__ = ["Dataset", "NetworkConfig", "TrainConfig", "generate_dataset", "load_dataset",
           "save_dataset"]
__version__ = "0.1.0"
