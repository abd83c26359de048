"""Design strategy network for sequential truss design with hybrid actions."""

__version__ = "0.1.0"
