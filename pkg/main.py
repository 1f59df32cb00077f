import sys

from cflab.cli.commands import run


if __name__ == "__main__":
    try:
        sys.exit(run())
    except KeyboardInterrupt:
        print("Interrupted by keyboard.")
        sys.exit(130)
