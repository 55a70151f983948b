"""View-disentangled 2D pose embeddings trained by cross-view mutual information maximization."""

__version__ = "0.1.0"
