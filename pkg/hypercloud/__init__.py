"""Autoencoding hypernetwork for point clouds: a cloud in, the weights of a
target network out, and that network turns unit-ball samples into the shape."""

__version__ = "0.1.0"
