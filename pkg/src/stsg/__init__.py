"""Triple-encoder spatiospectral segmentation on a small numpy autograd core."""
from .kernels import backend_name, set_backend
from .network import NetworkConfig, TripleEncoderNet, build, predict
from .losses import LossConfig, MetricReport, evaluate
from .data import SynthConfig, Dataset, generate_dataset, load_dataset, save_dataset
from .training import TrainConfig, train, train_and_evaluate

__version__ = "0.1.0"

__all__ = [
    "backend_name", "set_backend",
    "NetworkConfig", "TripleEncoderNet", "build", "predict",
    "LossConfig", "MetricReport", "evaluate",
    "SynthConfig", "Dataset", "generate_dataset", "load_dataset", "save_dataset",
    "TrainConfig", "train", "train_and_evaluate",
]
