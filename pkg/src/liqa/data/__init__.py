"""Synthetic blind-sweep data: generation, filtering, splits, preprocessing, augmentation."""
