"""Autoregressive transformer forecasting of three-component seismic waveforms."""

__version__ = "0.1.0"
