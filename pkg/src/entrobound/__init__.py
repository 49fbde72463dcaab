"""Lower bounds on ground energies from entropy-constrained marginal relaxations."""
