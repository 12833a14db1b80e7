"""Self-contained laboratory for distantly-supervised sequence labeling.

Trains a pair of teacher-student token taggers on noisy BIO corpora with
uncertainty-gated pseudo-label selection, small-loss label exchange between
the students, and EMA teacher updates, plus tooling to build the noisy
corpora and evaluate everything.
"""

__version__ = "0.1.0"
