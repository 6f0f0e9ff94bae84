"""Allow `python -m detpipe` as an alternative to the console script."""

from .cli import main

main()
