"""Desk-scale lab for adversarial robustness of hybrid CTC/attention recognizers."""

__version__ = "0.1.0"
