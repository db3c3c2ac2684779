"""Near-field RIS localization under mutual coupling: simulation, JLMC
estimation, and CRB/MCRB bounds."""

__version__ = "0.1.0"
