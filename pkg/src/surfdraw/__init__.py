"""Map 2D drawing strokes onto 3D surfaces and turn them into pen-pose trajectories."""

__version__ = "0.1.0"
FORMAT_VERSION = 1
