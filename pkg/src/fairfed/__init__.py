"""Loss-gap-parity federated learning simulator (EAGLE with FedAvg, q-FFL and AFL baselines)."""

__version__ = "0.1.0"
