"""Few-shot percussion transcription toolkit.

Train a prototypical embedding on synthesized kits, then transcribe any
percussion sound in a track from a handful of example onsets.
"""

__version__ = "0.1.0"
