"""
Crowd Label Fusion
Image-aware fusion of crowd-sourced cell segmentations.
"""

__version__ = "0.1.0"
