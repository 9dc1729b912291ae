"""effort_lab: software effort estimation learners, tuners and experiment harness."""

__version__ = "0.1.0"
