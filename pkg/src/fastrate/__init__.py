"""Ridge fitted Q-iteration with linear features, exact tabular oracles and diagnostics."""

__version__ = "0.1.0"
