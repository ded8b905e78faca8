"""Multi-fidelity LSTM surrogates for time- and parameter-dependent outputs."""

__version__ = "0.1.0"
