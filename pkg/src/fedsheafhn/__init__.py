"""Personalized subgraph federated learning with sheaf diffusion and hypernetworks."""

__version__ = "0.1.0"
