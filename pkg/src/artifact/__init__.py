"""Random-coding error bounds, exact decoding failure and queue tails over Markov channels."""

__version__ = "0.1.0"
