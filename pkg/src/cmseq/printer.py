from typing import Iterable, Protocol

from cmseq.report import Report


class Printer(Protocol):

    def print(self, reports: Iterable[Report]):
        raise NotImplementedError
