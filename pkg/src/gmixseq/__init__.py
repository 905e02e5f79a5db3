"""Audio-conditioned sequence generators with a Gaussian-mixture prior
(expressions) and a normalizing-flow prior (head and eye motion), built on
a small numpy autodiff engine."""

__version__ = "0.1.0"
