import logging

from log_utils import BG_BLACK, BLUE, CYAN, GREEN, MAGENTA, RED, RESET, WHITE, YELLOW


class Agent:
    """
    An abstract superclass for the pipeline stages
    Used to log messages in a way that identifies each stage
    """

    RED = RED
    GREEN = GREEN
    YELLOW = YELLOW
    BLUE = BLUE
    MAGENTA = MAGENTA
    CYAN = CYAN
    WHITE = WHITE

    name: str = ""
    color: str = WHITE

    def _format(self, message: str) -> str:
        return BG_BLACK + self.color + f"[{self.name}] {message}" + RESET

    def log(self, message: str):
        """
        Log this as an info message, identifying the agent with its color
        """
        logging.info(self._format(message))

    def debug(self, message: str):
        logging.debug(self._format(message))

    def warn(self, message: str):
        """
        Log a stage that skips work it would normally do
        """
        logging.warning(self._format(message))
