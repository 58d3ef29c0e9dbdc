"""Command-line harness and run reports."""
from .cli import main

__all__ = ["main"]
