"""Ultrasound B-mode wound segmentation toolkit.

Trains a four-level LeakyReLU U-Net on (synthetic) B-mode sweep data,
evaluates per-frame Dice/precision/recall, renders TP/FP/FN overlays and
computes dilation/erosion-based wound-region intensity ratios.
"""

__version__ = "0.1.0"
