"""
Package wide logger access.
"""
import logging

_LOGGER_NAME = "hinge.rl"
_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class HingeLogger(object):
    """
    Hands out the single package logger, attaching a stream handler the first time it is requested.
    """

    _configured = False

    @staticmethod
    def getLogger():
        logger = logging.getLogger(_LOGGER_NAME)
        if not HingeLogger._configured:
            handler = logging.StreamHandler()
            handler.setFormatter(logging.Formatter(_FORMAT))
            logger.addHandler(handler)
            logger.setLevel(logging.INFO)
            logger.propagate = False
            HingeLogger._configured = True

        return logger

    @staticmethod
    def setLevel(level):
        """
        Set the verbosity of the package logger.

        :param level: A logging level, either a name like 'DEBUG' or the numeric value.
        """
        HingeLogger.getLogger().setLevel(level)
