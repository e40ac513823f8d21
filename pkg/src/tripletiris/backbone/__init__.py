from .checkpoint import load_checkpoint, save_checkpoint
from .model import (
    LOSS_KINDS,
    BackboneConfig,
    BackboneModel,
    GradientSet,
    LossOutput,
    backward,
    embed_batch,
    forward_embed,
    forward_logits,
    init_model,
    logits_batch,
    loss_and_grads,
    resnet50_shape_config,
    parameter_shapes,
    sgd_step,
    softmax,
    tiny_config,
)
