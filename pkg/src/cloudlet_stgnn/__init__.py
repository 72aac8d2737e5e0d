"""Simulation of ST-GCN traffic forecasting trained centrally, with federated
averaging, server-free averaging between neighbouring cloudlets, or gossip."""

__version__ = "0.1.0"
