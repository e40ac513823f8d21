"""Iris recognition with batch-hard triplet training on a small numpy ResNet.

Submodules: ``dataset`` (image corpora, P x K batches, splits),
``augment`` (training and test-time augmentation), ``backbone`` (network,
gradients, checkpoints), ``triplet`` (mining and losses), ``evaluation``
(EER, FRR at FAR, ROC, Rank-1), ``trainer`` (two-stage training),
``store`` (embedding files) and ``cli``.
"""

__version__ = "0.1.0"
