"""coworld - offline visual RL transfer by co-training source and target world models."""

__version__ = "0.1.0"
__license__ = "Apache-2.0"
