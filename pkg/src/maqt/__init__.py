"""Policy-tree medium access (ALOHA-QT, mAQT) and baselines for AoI studies."""

__version__ = "0.1.0"
