"""Local GP experts, kernels and partitioning"""
