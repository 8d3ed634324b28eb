"""Entropy-guided k-guard decoding toolkit.
"""
__version__ = '0.3.0'
