"""``python -m rydcomp`` dispatches to the command-line front end."""

from .cli import main

if __name__ == "__main__":
    raise SystemExit(main())
