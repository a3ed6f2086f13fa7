"""Allow running as: python -m rx_speedguard"""

from .cli import cli

if __name__ == "__main__":
    cli()
