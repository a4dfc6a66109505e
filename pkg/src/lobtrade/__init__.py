"""Uncertainty-aware limit order book trading toolkit.

Pipeline: synthetic or recorded LOB snapshots -> normalized feature
windows -> conv/inception/LSTM classifier with Monte-Carlo dropout ->
entropy-sized trading strategies -> mid-price backtest and risk metrics.
"""

__version__ = "0.1.0"
