from pathlib import Path
from typing import Iterable

from cmseq.report import Report
from cmseq.serialization import save_json


class JSONPrinter:
    def __init__(self, out_path: Path):
        self.out_path = out_path

    def print(self, reports: Iterable[Report]):
        documents = {report.title or f"report_{index}": report.to_dict() for index, report in enumerate(reports)}
        save_json(documents, self.out_path)
