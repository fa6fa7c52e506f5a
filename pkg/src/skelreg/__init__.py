"""Skeleton-graph non-rigid registration of rib-cartilage point clouds."""

__version__ = "0.1.0"
