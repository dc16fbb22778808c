from .layers import (batchnorm_backward, batchnorm_forward, conv_backward,
                     conv_forward, relu_backward, relu_forward)
from .losses import loss, multi_head_loss
from .network import (Network, NetworkSpec, ParameterStore,
                      initialize_parameters, reference_spec_1d,
                      reference_spec_2d, tiny_spec)
from .optim import AdamState, adam_step
from .serialize import load_model, load_optimizer_state, save_model, \
    save_optimizer_state

__all__ = [
    "batchnorm_backward", "batchnorm_forward", "conv_backward",
    "conv_forward", "relu_backward", "relu_forward", "loss",
    "multi_head_loss", "Network", "NetworkSpec", "ParameterStore",
    "initialize_parameters", "reference_spec_1d", "reference_spec_2d",
    "tiny_spec", "AdamState", "adam_step", "load_model",
    "load_optimizer_state", "save_model", "save_optimizer_state",
]
