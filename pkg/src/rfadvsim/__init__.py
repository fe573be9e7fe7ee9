"""Channel-aware adversarial attacks and randomized-smoothing defense for a modulation classifier."""

__version__ = "0.1.0"
