"""Tests for RX Page Marker."""
