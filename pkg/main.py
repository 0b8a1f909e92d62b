#!/usr/bin/env python3
import logging
import sys

from src.cli import parse_args
from src.core import constants as const
from src.core.app import App
from src.core.errors import SimulationError

# Set up logging with thread names for better traceability
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s [%(threadName)s] %(levelname)s - %(name)s: %(message)s",
    handlers=[logging.StreamHandler(), logging.FileHandler(const.LOG_FILE)],
)
logger = logging.getLogger(__name__)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        return App(args).run()
    except KeyboardInterrupt:
        logger.info("Run interrupted by user")
        return const.EXIT_USAGE
    except SimulationError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return const.EXIT_IO
    except Exception as e:
        logger.error(f"Application error: {str(e)}", exc_info=True)
        return const.EXIT_USAGE


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
