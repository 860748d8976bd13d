"""Multi-agent open-vocabulary object-goal navigation with a voxel-world simulator."""

__version__ = "0.1.0"
