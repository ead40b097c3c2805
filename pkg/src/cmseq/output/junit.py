from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable
from xml.etree.ElementTree import Element, ElementTree, SubElement, indent

from cmseq.report import Check, Report


def add_property(properties: Element, name, value):
    SubElement(properties, "property", name=str(name), value=str(value))


class JUnitPrinter:
    def __init__(self, out_path: Path):
        self.out_path = out_path

    @staticmethod
    def print_testcase(testsuite: Element, report: Report, check: Check):
        testcase = SubElement(testsuite, "testcase", name=check.name, classname=report.title or "cmseq")
        properties = SubElement(testcase, "properties")
        add_property(properties, "residual", f"{check.residual:.6e}")
        if check.tolerance is not None:
            add_property(properties, "tolerance", f"{check.tolerance:.6e}")
        if check.threshold is not None:
            add_property(properties, "threshold", f"{check.threshold:.6e}")

        if check.passed is None:
            SubElement(testcase, "skipped", message=check.detail or "Check was not evaluated")
        elif check.passed is False:
            failure = SubElement(testcase, "failure", message=f"{check.name} failed", type="ResidualExceeded")
            failure.text = "\n".join([f"residual {check.residual:.6e} exceeds threshold {check.threshold}",
                                      *(f"{key}: {value:.6e}" for key, value in check.residuals.items()),
                                      check.detail])
        return check.passed

    def print_suite(self, root: Element, report: Report):
        testsuite = SubElement(root, "testsuite", name=report.title or "cmseq")
        properties = SubElement(testsuite, "properties")
        for key, value in report.summary.items():
            add_property(properties, key, value)

        outcomes = [self.print_testcase(testsuite, report, check) for check in report]
        skipped = sum(outcome is None for outcome in outcomes)
        failures = sum(outcome is False for outcome in outcomes)
        testsuite.attrib["tests"] = str(len(outcomes))
        testsuite.attrib["skipped"] = str(skipped)
        testsuite.attrib["failures"] = str(failures)
        testsuite.attrib["timestamp"] = str(datetime.now(timezone.utc).isoformat())
        return len(outcomes), failures, skipped

    def print(self, reports: Iterable[Report]):
        root = Element("testsuites")
        counts = [self.print_suite(root, report) for report in reports]
        tests, failures, skipped = (sum(column) for column in zip(*counts)) if counts else (0, 0, 0)
        root.attrib["tests"] = str(tests)
        root.attrib["failures"] = str(failures)
        root.attrib["skipped"] = str(skipped)
        root.attrib["timestamp"] = str(datetime.now(timezone.utc).isoformat())

        tree = ElementTree(root)
        indent(tree, space="    ", level=0)
        self.out_path.parent.mkdir(exist_ok=True, parents=True)
        tree.write(self.out_path, encoding="utf-8")
