"""Shape, first-order and gray-level texture features of labelled structures."""
from mindsets.radiomics.catalog import FAMILIES, catalog
from mindsets.radiomics.extract import RadiomicsConfig, RadiomicsFragment, extract_all, roi_features
from mindsets.radiomics.firstorder import DiscretizedRoi, discretize, first_order_features
from mindsets.radiomics.shape import shape_features
from mindsets.radiomics.texture import (
    TextureMatrix,
    glcm_features,
    glcm_matrix,
    gldm_features,
    gldm_matrix,
    glrlm_features,
    glrlm_matrices,
    glrlm_matrix,
    glszm_features,
    glszm_matrix,
    ngtdm_features,
    ngtdm_matrix,
)

__all__ = [
    "FAMILIES", "catalog", "RadiomicsConfig", "RadiomicsFragment", "extract_all", "roi_features",
    "DiscretizedRoi", "discretize", "first_order_features", "shape_features", "TextureMatrix",
    "glcm_features", "glcm_matrix", "gldm_features", "gldm_matrix", "glrlm_features",
    "glrlm_matrices", "glrlm_matrix", "glszm_features", "glszm_matrix", "ngtdm_features",
    "ngtdm_matrix",
]
