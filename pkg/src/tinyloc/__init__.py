"""Tiny RSSI indoor-localisation models and their compression."""

__version__ = "0.1.0"
