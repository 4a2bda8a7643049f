"""Tests for the sik package."""
