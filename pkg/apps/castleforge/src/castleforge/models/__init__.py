"""Artifact models package init."""
