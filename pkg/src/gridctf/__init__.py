"""Grid-world capture-the-flag: population training, rating and analysis."""

__version__ = "0.1.0"
