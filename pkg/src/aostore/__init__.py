"""A small active object store: persistent objects whose methods run where their data lives."""

__version__ = "0.1.0"
