"""Composer attribution for piano MIDI via piano-roll CNNs."""

__version__ = "0.1.0"
