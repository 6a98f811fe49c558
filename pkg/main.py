"""
duoflow: joint optical flow estimation and double-layer separation.

    python main.py synthesize --out DIR --seed N [--mode static|dynamic] [--size HxW]
    python main.py estimate --i0 P --i1 P --mode M [...] --out DIR
    python main.py evaluate --result DIR --gt DIR
"""
import argparse
import logging
import logging.config
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from command import estimate, evaluate, synthesize
from core.errors import DuoflowError

ROOT = Path(__file__).resolve().parent
LOGGING_ENV = "DUOFLOW_LOGGING_INI"
LEVEL_ENV = "DUOFLOW_LOG_LEVEL"

logger = logging.getLogger("duoflow")


# ---------------------------------------------------------
# 1. LOGGING
# ---------------------------------------------------------
def configure_logging() -> None:
    ini = Path(os.getenv(LOGGING_ENV, ROOT / "logging.ini"))
    if ini.exists():
        logging.config.fileConfig(ini, disable_existing_loggers=False)
    else:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)-5.5s [%(name)s] %(message)s")

    level = os.getenv(LEVEL_ENV)
    if level:
        try:
            for name in (None, "duoflow", "solvers"):
                logging.getLogger(name).setLevel(level.upper())
        except ValueError:
            logger.warning("[SYSTEM] ignoring unknown %s=%r", LEVEL_ENV, level)


# ---------------------------------------------------------
# 2. ARGUMENT GRAMMAR
# ---------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="duoflow",
        description="Joint optical flow estimation and double-layer image separation.",
    )
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True
    synthesize.register(commands)
    estimate.register(commands)
    evaluate.register(commands)
    return parser


# ---------------------------------------------------------
# 3. DISPATCH
# ---------------------------------------------------------
def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (DuoflowError, OSError) as exc:
        logger.debug("[SYSTEM] %s failed", args.command, exc_info=True)
        print(f"duoflow {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
