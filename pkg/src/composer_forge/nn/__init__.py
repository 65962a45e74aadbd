from .autodiff import Tensor, as_tensor, grad_enabled, no_grad
from . import functional
from .resnet import (
    BASE_WIDTHS,
    STAGE_PLANS,
    BasicBlock,
    BatchNorm2d,
    BottleneckBlock,
    Conv2d,
    Linear,
    ModelConfig,
    ResNet,
    build_model,
)
from .checkpoint import load_checkpoint, read_sidecar, read_tensors, save_checkpoint

__all__ = [
    "Tensor",
    "as_tensor",
    "grad_enabled",
    "no_grad",
    "functional",
    "BASE_WIDTHS",
    "STAGE_PLANS",
    "BasicBlock",
    "BatchNorm2d",
    "BottleneckBlock",
    "Conv2d",
    "Linear",
    "ModelConfig",
    "ResNet",
    "build_model",
    "load_checkpoint",
    "read_sidecar",
    "read_tensors",
    "save_checkpoint",
]
