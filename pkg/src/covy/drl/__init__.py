"""Mapless navigation agents built on a small numpy MLP."""
