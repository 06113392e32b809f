"""disq: interpreter, type checker, and observable-simulation checker for
a distributed quantum process language with membranes and loci."""

__version__ = "0.1.0"
