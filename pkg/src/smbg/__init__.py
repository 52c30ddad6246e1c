"""Sparse multilevel boundary generator: temporal action proposal toolkit."""

from . import costmodel, evalkit, labels, losses, net, pipeline, postprocess, tensor

__all__ = ["costmodel", "evalkit", "labels", "losses", "net", "pipeline",
           "postprocess", "tensor"]
__version__ = "0.1.0"
