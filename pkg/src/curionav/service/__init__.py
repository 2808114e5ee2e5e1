"""HTTP service wrapping the navigation core."""

from .app import create_app

__all__ = ["create_app"]
