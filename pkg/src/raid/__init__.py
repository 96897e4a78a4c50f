"""In-network RA signaling-storm detection: traffic synthesis, forest
training and encoding, and a switch-pipeline emulator."""

__version__ = "0.1.0"
