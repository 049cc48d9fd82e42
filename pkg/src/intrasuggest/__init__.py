"""Personalised query suggestion for intranet search.

Builds temporal topic-based user profiles from in-session clicks and queries,
re-ranks a non-personalised suggestion list with a gradient-boosted ranking
model, and replays query logs to evaluate suggestion quality against
click-validated refinements.
"""

__version__ = "0.1.0"
