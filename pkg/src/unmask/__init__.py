"""Face-masked speech enhancement laboratory.

Subpackages cover the full loop: mask-corruption simulation, spectral
front end, the attention-filtered enhancement network with its multitask
critic, a learned perceptual-quality predictor, the three-phase training
protocol, evaluation metrics, and a rating-collection HTTP service.
"""

__version__ = "0.1.0"
