"""All-optical coherence protection and magnetic resonance with NV centers."""

__version__ = "0.1.0"
