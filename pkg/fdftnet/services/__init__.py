"""Services Package.

This package contains the workflows built on top of the network:
- Cutout augmentation
- Losses, optimizers, early stopping and the training loop
- The pretrain / freeze / fine-tune protocol
- Threaded evaluation, ACC / AUROC and the ablation table
- The gradient-check suite
"""
