"""Simulated interblockchain communication: stores, clients, handshakes, packets, relayers."""
