"""Input-to-state stable continuous-time recurrent network models of circuits."""

__version__ = "0.1.0"
