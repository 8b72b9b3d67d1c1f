"""Parameter-efficient ultrasound frame-quality assessment with a frozen ViT,
LoRA adapters and classification or mask-threshold heads."""

__version__ = "0.1.0"
