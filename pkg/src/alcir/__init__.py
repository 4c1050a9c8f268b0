"""Complementary item recommendation for cold seed items: a category
translator trained with triplet supervision plus cycle-consistency and an
adversarial category classifier."""

__version__ = "0.1.0"
