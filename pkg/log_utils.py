import logging
import re

# Foreground colors
RED = '\033[31m'
GREEN = '\033[32m'
YELLOW = '\033[33m'
BLUE = '\033[34m'
MAGENTA = '\033[35m'
CYAN = '\033[36m'
WHITE = '\033[37m'

# Background colors
BG_BLACK = '\033[40m'
BG_BLUE = '\033[44m'

# Reset code to return to default color
RESET = '\033[0m'

ANSI_PATTERN = re.compile(r'\033\[[0-9;]*m')


def strip_colors(message: str) -> str:
    """
    Remove ANSI color codes, for log destinations that are not terminals
    """
    return ANSI_PATTERN.sub('', message)


class PlainFormatter(logging.Formatter):
    """
    A formatter that writes agent messages without their colors
    """

    def format(self, record: logging.LogRecord) -> str:
        return strip_colors(super().format(record))
