"""Recovery of low-rank matrices with effectively sparse factors."""
