"""
dcgnet: graph convolution networks for body mesh recovery

This library includes a small reverse-mode autodiff engine, mesh hierarchies built by
edge collapse, graph convolution layers with learned adjacency, a U-shaped network
with attention fusion, shape completion pretraining on synthetic bodies and the
joint error metrics used to evaluate it.

Examples
--------
First, let's build a mesh hierarchy from a subdivided icosahedron
>>> import dcgnet
>>> hierarchy = dcgnet.build_hierarchy(dcgnet.icosphere(1), levels=2, factor=4)
>>> hierarchy.node_counts
[42, 11, 4]

A network maps per-vertex input features to vertex coordinates
>>> net = dcgnet.DCGNet(hierarchy, dcgnet.NetworkConfig(in_features=3, width=8))
>>> x = dcgnet.Tensor(hierarchy.levels[0].vertices)
>>> net.forward(x).shape
(42, 3)

The vertex loss is differentiable with respect to every parameter
>>> loss = dcgnet.vertex_loss(net.forward(x), dcgnet.Tensor(hierarchy.levels[0].vertices))
>>> dcgnet.backward(loss)
>>> net.stem.weight.grad.shape
(3, 8)
"""

from dcgnet.errors import (
    DCGNetError,
    ConfigError,
    MeshError,
    ShapeError,
    DatasetError,
    CheckpointError,
)
from dcgnet.mesh import (
    TriMesh,
    NormalizedAdjacency,
    build_adjacency,
    load_obj,
    save_obj,
    tetrahedron,
    icosahedron,
    icosphere,
)
from dcgnet.coarsen import MeshHierarchy, build_hierarchy, save_hierarchy, load_hierarchy
from dcgnet.autodiff import Tensor, backward
from dcgnet.layers import (
    GraphConvLayer,
    AdaptiveGraphConvLayer,
    GCNUnit,
    GraphAttention,
    NonLocalBlock,
)
from dcgnet.network import DCGNet, NetworkConfig
from dcgnet.completion import MaskSpec, make_mask, completion_step
from dcgnet.losses import Camera, JointRegressor, vertex_loss, total_loss
from dcgnet.metrics import EvalReport, mpjpe, reconstruction_error, pck, auc, evaluate
from dcgnet.data import body_template, generate_dataset, load_dataset
from dcgnet.train import TrainConfig, Checkpoint, pretrain, train_main
from dcgnet.report import report_to_str, report_to_md, print_report
