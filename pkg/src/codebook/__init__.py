from .codebook import Codebook, build_codebook
from .kmeans import KMeansResult, kmeans_init, run_kmeans, sample_descriptors

__all__ = ["Codebook", "KMeansResult", "build_codebook", "kmeans_init", "run_kmeans", "sample_descriptors"]
