import logging
logger = logging.getLogger("invert")

class LoggingObject(object):
    """ Helper superclass for objects which wish to generate log output
    tagged with their own description.

    Three levels of output are available:

    object.log_info()
    object.log_warn()
    object.log_debug() """

    def log_info(self, msg = "", *args):
        if msg and args:
            msg = msg % args
        logger.info("[%s] %s", self, msg)

    def log_warn(self, msg = "", *args):
        if args:
            msg = msg % args
        logger.warning("[%s] %s", self, msg)

    def log_debug(self, msg = "", *args):
        if not logger.isEnabledFor(logging.DEBUG):
            return
        if args:
            msg = msg % args
        logger.debug("[%s] %s", self, msg)
