"""Single source of the package version for manifests and the service."""

__version__ = "0.1.0"
