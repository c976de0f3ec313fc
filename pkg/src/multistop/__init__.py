"""Optimal single and double stopping on scenario trees, plus a two-exercise
American exchange option priced on a product binomial lattice."""
