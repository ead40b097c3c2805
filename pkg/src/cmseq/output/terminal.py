from typing import Iterable

from click import echo, style

from cmseq.report import Check, Report
from cmseq.util import format_dict, print_indent


def colored_result(success: bool | None):
    if success is None:
        return "SKIPPED"
    return style("PASS", fg="green") if success else style("FAIL", fg="red")


class TerminalPrinter:
    def __init__(self, brief: bool = False):
        self.brief = brief

    def print_check(self, check: Check):
        print_indent(check.name, 1, end=' ')
        echo(colored_result(check.passed), nl=False)
        if check.threshold is not None:
            echo(f" residual {check.residual:.3e} (threshold {check.threshold:.3e})")
        else:
            echo(f" residual {check.residual:.3e}")

        if self.brief or check.passed is not False:
            return
        if check.detail:
            print_indent(check.detail, 2)
        for line in format_dict({str(key): value for key, value in check.residuals.items()}, indent_level=2):
            print(line)

    def print_report(self, report: Report):
        print(report.title or "Report")
        if report.summary and not self.brief:
            for line in format_dict(report.summary, indent_level=1):
                print(line)
        for check in report:
            self.print_check(check)
        echo(f"Result: {colored_result(bool(report))}")

    def print(self, reports: Iterable[Report]):
        for report in reports:
            self.print_report(report)
