"""Group equivariant convolutions on p4 / p4m with g- and gc-separable variants."""

from . import kernels as _kernels
from .analysis import pc1_ratio, rank1_project, redundancy_report
from .cost import LayerShape, count_macs, count_params, network_report, reduction_factor
from .groups import P4, P4M, group
from .layers import GConv, LiftingGConv, SepGConvG, SepGConvGC, group_coset_pool
from .models import ArchitectureConfig, build
from .tensor import Parameter, Tensor, backward
from .training import RunReport, TrainConfig, load_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ArchitectureConfig", "GConv", "LayerShape", "LiftingGConv", "P4", "P4M", "Parameter",
    "RunReport", "SepGConvG", "SepGConvGC", "Tensor", "TrainConfig", "backward", "build",
    "count_macs", "count_params", "group", "group_coset_pool", "load_checkpoint",
    "network_report", "pc1_ratio", "rank1_project", "redundancy_report", "reduction_factor",
    "train",
]
