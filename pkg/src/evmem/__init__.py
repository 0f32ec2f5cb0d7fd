"""Event-stream histograms, a numpy autodiff engine, and masked-token
pretraining of a small vision transformer, end to end at desk scale."""

__version__ = "0.1.0"
