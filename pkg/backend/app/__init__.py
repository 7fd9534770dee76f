"""Distributed Gaussian process regression with per-point expert selection"""
__version__ = "0.1.0"
