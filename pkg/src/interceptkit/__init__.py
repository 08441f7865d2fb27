"""Body-frame target interception stack with a deterministic closed-loop
simulator and batch experiment tooling."""

__version__ = "0.1.0"
