"""Scenario loading, transcripts, and the run/diff/fuzz driver."""
