"""Joint radar-communication precoder design with rate-splitting access."""

__version__ = "0.1.0"
