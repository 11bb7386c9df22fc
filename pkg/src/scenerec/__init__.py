"""Scene recognition from dense DAISY words and a whole-image HOG descriptor."""

__version__ = "0.1.0"
