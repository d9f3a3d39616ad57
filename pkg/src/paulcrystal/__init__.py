"""Normal modes and structural transitions of ion crystals in linear Paul traps,
with and without the pseudopotential approximation."""

__version__ = "0.1.0"
