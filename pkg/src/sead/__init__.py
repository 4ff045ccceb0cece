"""Neural cellular automata that learn a local rule and evolve it to a fixed point."""

__version__ = "0.1.0"
