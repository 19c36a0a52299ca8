"""Target models: toy densities and the four applied posteriors."""
