"""Dynamic sample selection for continual test-time adaptation, at desk scale."""

__version__ = "0.1.0"
