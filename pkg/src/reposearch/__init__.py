"""Issue-localization agent toolkit: repository index, search tools, agent loop,
ranking metrics and training-data construction."""

__version__ = "0.1.0"
