"""duet: dual music/dance sequence generation toolkit.

A desk-scale library and CLI for training paired music-to-dance and
dance-to-music sequence generators, coupling them through an entropic
Gromov-Wasserstein alignment of encoder embeddings and a cycle consistency
loss, and evaluating the results with motion and note metrics.
"""

__version__ = "0.1.0"
