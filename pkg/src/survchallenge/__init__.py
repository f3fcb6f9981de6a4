"""Survival prognosis toolkit."""
