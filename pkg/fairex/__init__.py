# SPDX-License-Identifier: Apache-2.0

"""
Fair data exchange simulator.

A notary certifies encrypted data, a buyer and a seller match on an audience
criterion, and a hash-locked contract on a simulated chain makes the
key-for-token swap atomic. The ``ideal_ref`` module replays every run against
an executable ideal functionality.
"""

__version__ = "0.1.0"
