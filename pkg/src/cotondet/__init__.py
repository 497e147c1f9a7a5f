"""Detection-model toolkit for an attention-augmented YOLO11 cotton detector."""

__version__ = "0.1.0"
