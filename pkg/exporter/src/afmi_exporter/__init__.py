"""Reference-model exporter: trains a small MNIST CNN and writes AFW1 fixtures."""

__version__ = "0.1.0"
