"""Hardware-bound health-record ledgers, sync and image watermarking over simulated ASICs."""

__version__ = "0.1.0"
