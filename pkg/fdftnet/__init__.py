"""Fake-image detection toolkit.

This package implements the attention-augmented fine-tuning network for
detecting manipulated face images, together with everything needed to train
and verify it at desk scale:
- A dense tensor with reverse-mode differentiation and gradient checks
- Convolution, normalization, activation and squeeze-and-excitation layers
- Spatial self-attention, channel attention, the Fine-Tune Transformer and
  MBblockV3 stacks assembled on top of a frozen pretrained backbone
- Cutout augmentation, the pretrain/freeze/fine-tune training protocol and
  ACC/AUROC evaluation
- A binary checkpoint format and a command-line interface

For more information, refer to README.md and DESIGN.md.
"""

__version__ = "1.0.0"
__author__ = "FDFtNet Toolkit Team"
__license__ = "MIT"
