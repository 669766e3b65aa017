from __future__ import annotations

import sys

from dotenv import load_dotenv
load_dotenv(override=False)  # .env supplies HEDGECLIPPER_* defaults; real env wins

from src.cli import cli_main  # noqa: E402


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
