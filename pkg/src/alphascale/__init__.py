"""Device-independent translucency value A for RGBA."""
__version__ = "0.1.0"
