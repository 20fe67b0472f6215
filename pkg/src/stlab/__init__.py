"""Desk-scale speech translation lab on synthetic data.

Cascade and end-to-end pipelines over tiny character-level models:
a CTC speech recognizer, an attention text translator, a BLSTM
adapter between them, frame compression by recognized character, and
staged fine-tuning with per-group parameter freezing.
"""

__version__ = "0.1.0"
