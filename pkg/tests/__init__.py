"""
Test package for the fair data exchange simulator
"""
