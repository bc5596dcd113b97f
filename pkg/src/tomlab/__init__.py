"""tomlab: a gridworld theory-of-mind laboratory.

Generates behavioural traces from populations of maze agents, trains a
meta-learning observer network to predict their actions, consumptions,
successor representations and belief states, and validates the learned
model against analytic oracles and false-belief probes.
"""

__version__ = "0.1.0"
