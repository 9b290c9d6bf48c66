"""Comparison detectors: supervised LSTM-attention classifier, ARIMA residuals,
isolation forest on raw lag vectors, and the VAE-IF pipeline with and without
encoder attention."""
