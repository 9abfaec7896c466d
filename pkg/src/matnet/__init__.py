"""Matrix-centric neural networks: layers, recurrent cells and graph models
whose inputs, hidden states and outputs are matrices."""

__version__ = "0.1.0"
