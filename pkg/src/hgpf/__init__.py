"""Post-training of heterogeneous graph neural networks with an auxiliary
label-propagation / schema-aware predictor."""

__version__ = "0.1.0"
