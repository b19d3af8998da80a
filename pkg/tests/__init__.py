"""Ensure tests can be imported for useful utilities."""
