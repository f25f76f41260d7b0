from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_function, grad_check
from .layers import Conv2d, ConvBlock, EncoderDecoder, Module
from .losses import msg_loss, mse_loss
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, no_grad

__all__ = [
    "Adam", "AdamState", "Conv2d", "ConvBlock", "EncoderDecoder", "Module", "Tensor",
    "adam_step", "check_function", "grad_check", "load_checkpoint", "msg_loss", "mse_loss",
    "no_grad", "save_checkpoint",
]
