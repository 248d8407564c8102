"""squisher-lab: diagonal Fisher estimates from optimizer state and the experiments built on them."""
