"""Conditionally Markov (CM_L / CM_F), reciprocal and Markov Gaussian sequence models."""
from cmseq.cli import cli, run
from cmseq.log import setup_logger

__all__ = ['cli', 'main', 'run']


def main():
    setup_logger()
    raise SystemExit(run())
