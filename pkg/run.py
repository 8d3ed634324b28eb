import sys

from enkg.cli import main

# Same as running "python -m enkg.cli"; see README.md for the subcommands.
sys.exit(main())
