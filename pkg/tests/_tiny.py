import numpy as np

from fecnn import nn


def tiny_model():
    """conv 1->2 (2x2, 4x4 input, pool 2) then fc 2->3; weights are k/8 for simple binary fractions."""
    conv = nn.conv_layer(1, 2, 2, 4, weights=np.arange(8) / 8 - 0.5, bias=[0.25, -0.125], pool=2)
    fc = nn.fc_layer(2, 3, weights=np.arange(6) / 8 - 0.25, bias=[0.0, 0.5, -0.5], activation="none")
    return nn.NetworkModel([conv, fc], class_count=3, input_shape=(4, 4, 1))
