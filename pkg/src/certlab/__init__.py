"""certlab: instance-optimal quantum state certification toolkit."""

__version__ = "0.1.0"
