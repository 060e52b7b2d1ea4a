"""Radiomics + multi-omics dementia subtyping toolkit."""

__version__ = "0.1.0"
