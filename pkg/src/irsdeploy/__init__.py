"""Link-level simulation of BS-side, user-side and hybrid IRS deployments."""

__version__ = "0.1.0"
