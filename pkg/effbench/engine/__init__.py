from .tensor import Rng, Shape4, Tensor, reshape, tensor_create
