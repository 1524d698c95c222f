from njet.nn.functional import (
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward,
    dense_backward, dense_forward, global_avgpool_backward, global_avgpool_forward,
    maxpool_backward, maxpool_forward, relu_backward, relu_forward, softmax_xent,
)
from njet.nn.layers import (
    BatchNorm2d, Conv2d, Dense, GlobalAvgPool, Layer, MaxPool2d, NJetConv2d, ReLU,
    SafeSubsample, Sequential,
)
from njet.nn.checkpoint import MAGIC, CheckpointError, load, save
