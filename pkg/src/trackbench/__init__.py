"""JPDA, track-oriented MHT and particle BP multitarget trackers on a shared system model."""

__version__ = "0.1.0"
