"""Privacy-preserving WiFi probe-request crowd counting."""
__version__ = "0.1.0"
