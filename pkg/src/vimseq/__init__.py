"""Energy-efficient sequential movements on a variable impedance joint."""

__version__ = "0.1.0"
