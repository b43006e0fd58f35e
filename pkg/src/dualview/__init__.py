"""Two-view image classification with memory-bank center-contrastive
training, cascaded down-sampling attention fusion and a parameter-free
similarity-gated expert head."""

__version__ = "0.1.0"
