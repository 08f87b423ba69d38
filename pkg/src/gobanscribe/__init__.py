"""gobanscribe: automatic transcription of Go games from frame streams."""

__version__ = "0.1.0"
