"""Physical constants shared across the toolkit."""

# CODATA 2018 exact value, J/K
K_BOLTZMANN = 1.380649e-23
