# Copyright (C) 2024 - nakasim contributors
# SPDX-License-Identifier: GPL-2.0-only

import logging

# Third-party loggers that flood DEBUG output (font lookups, PIL plugins)
QUIET_LOGGERS = ('matplotlib', 'PIL')


def create_logger(name, level='INFO', stream=None):
    """
    Create the command-line logger; 'nakasim.*' loggers propagate to it

    """
    formatter = logging.Formatter(
        fmt='%(asctime)s - [%(levelname)s] %(module)s: %(message)s'
    )

    handler = logging.StreamHandler(stream)
    handler.setFormatter(fmt=formatter)

    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.addHandler(handler)

    for quiet in QUIET_LOGGERS:
        logging.getLogger(quiet).setLevel(logging.WARNING)

    return logger
