"""xchainlab: a deterministic two-blockchain laboratory.

A producer chain runs contracts whose results a consumer chain
re-executes, compares, and confirms with proof; plus Monte-Carlo race
experiments over segment lengths and node counts.
"""

__version__ = "0.1.0"
