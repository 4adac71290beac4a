"""Motion-corrected multi-modal transformer for temporal action detection."""
__version__ = "0.1.0"
