"""Aggregation of expert predictions"""
