"""Tests for gripmat package."""
