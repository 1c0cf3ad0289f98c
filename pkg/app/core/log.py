import logging

_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str = "INFO") -> None:
    """Install a single stderr handler on the root logger. Safe to call twice."""
    root = logging.getLogger()
    if not any(getattr(h, "_streambench", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(_FORMAT))
        handler._streambench = True
        root.addHandler(handler)
    root.setLevel(level.upper())
