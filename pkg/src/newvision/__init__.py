"""newvision: a desk-scale multimodal encoder-decoder and the assistive
device pipeline built around it.

The package trains a small vision-language model on a synthetic scene corpus
(captioning, visual question answering, statement verification, retrieval)
and wraps it in a simulated wearable device: intent parsing, ultrasonic
ranging, grid navigation, and a failsafe mode, all reachable over HTTP.
"""

__version__ = "0.1.0"
