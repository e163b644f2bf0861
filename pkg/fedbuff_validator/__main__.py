"""
Entry point for running fedbuff-validator as a module.
"""

from fedbuff_validator.cli import main

if __name__ == "__main__":
    main()
