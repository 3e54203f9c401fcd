"""Simulator core: geometry, field solves, minimizing movements, radial solutions, certificates and scenarios."""
