"""Countable Markov partitions for nonuniformly hyperbolic maps of the flat torus."""
