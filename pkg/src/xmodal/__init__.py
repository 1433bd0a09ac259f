"""Cross-modal trajectory prediction at desk scale.

Library layout:

- ``autodiff``  reverse-mode tape, Adam, checkpoints
- ``scenario``  synthetic multi-agent scenes, modality views, geometry
- ``encoder``   social-behavior feature encoder (grid + LSTM + message passing)
- ``cvae``      per-modality CVAE branches and the joint cross-modal loss
- ``diversity`` Gaussian-kernel diversity regularizer
- ``metrics``   ADE/FDE, best-of-N selection, success-rate curves
- ``training``  run configuration, training loop, evaluation, ablations
- ``cli``       ``xmodal`` command-line entry points
"""

__version__ = "0.1.0"
