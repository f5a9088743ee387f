import logging
from collections.abc import Mapping
from typing import Any

from lightning_utilities.core.rank_zero import rank_prefixed_message, rank_zero_only


class RankedLogger(logging.LoggerAdapter):
    """A multi-GPU-friendly python command line logger.

    Bound context is appended to every message as ``<key=value, ...>``.
    """

    def __init__(
        self,
        name: str,
        context: Mapping[str, Any] | None = None,
    ) -> None:
        super().__init__(logger=logging.getLogger(name))
        self.context: dict[str, Any] = dict(context or {})

    def bind(self, **context: Any) -> "RankedLogger":
        """Return a child logger that carries additional context.

        :param context: Key/value pairs appended to each message.
        :return: A new `RankedLogger` sharing the same underlying logger.
        """
        return RankedLogger(self.logger.name, {**self.context, **context})

    @rank_zero_only
    def log(self, level: int, msg: str, *args, **kwargs) -> None:
        if not self.isEnabledFor(level):
            return

        rank = getattr(rank_zero_only, "rank", None)

        assert rank == 0, "Expect rank to be 0 when using rank_zero_only"

        if self.context:
            pairs = ", ".join(f"{k}={v}" for k, v in self.context.items())
            msg = f"{msg} <{pairs}>"

        msg = rank_prefixed_message(msg, rank)
        self.logger.log(level, msg, *args, **kwargs)
