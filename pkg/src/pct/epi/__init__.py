"""Agent-based epidemic core: disease model, contacts, world simulation."""
