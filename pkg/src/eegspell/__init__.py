"""Sklearn-style decoding of mental-task EEG codes into characters."""
