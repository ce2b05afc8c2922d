"""Hybridisation prediction toolkit."""
