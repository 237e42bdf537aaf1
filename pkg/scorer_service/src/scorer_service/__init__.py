"""HTTP sidecar serving image-text similarity scores and perceptual features."""

from .app import create_app
from .backends import StubBackend, build_backend

__all__ = ["create_app", "build_backend", "StubBackend"]
