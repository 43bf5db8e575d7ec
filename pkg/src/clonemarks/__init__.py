"""Clone detection for mobile social networks via Personal Marks and
Community Certificates, driven by contact traces."""

__version__ = "0.1.0"
