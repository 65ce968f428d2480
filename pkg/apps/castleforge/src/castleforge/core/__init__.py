"""Core constructions."""
