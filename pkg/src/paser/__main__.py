"""Make paser runnable as a module with python -m paser"""

from .cli import cli_main

if __name__ == "__main__":
    cli_main()
