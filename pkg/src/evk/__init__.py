"""evk: geometry, mask lifting, repainting, toy editing transformer and metrics for paired 3D edits."""

__version__ = "0.1.0"
