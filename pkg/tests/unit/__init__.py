"""
Unit tests for the fair data exchange simulator
"""
