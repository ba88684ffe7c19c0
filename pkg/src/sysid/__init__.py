"""On-track Pacejka tire identification."""
