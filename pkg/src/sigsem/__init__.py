"""Big-step and abstract-machine semantics for block-structured signals and exceptions."""

__version__ = "0.1.0"
