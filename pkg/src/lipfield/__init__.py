"""Speech-driven mouth synthesis in a canonical head space.

Sub-modules: ``geometry`` (poses, depth-based warping), ``diffcore`` (a small
reverse-mode autodiff engine), ``field`` (the audio-conditioned implicit mouth
field), ``losses``, ``sync`` (the audio-visual sync expert), ``compose``
(pasting and the blending network), ``synthdata`` (the synthetic head corpus)
and ``pipeline`` (config, training, inference, metrics and the CLI).
"""

__version__ = "0.1.0"
