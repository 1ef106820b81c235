"""Traffic-signal cycle control under varying intervention frequencies."""

__version__ = "0.1.0"
