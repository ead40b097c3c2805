import logging
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Any, Optional, Sequence

import click

from cmseq.analysis import assemble_precision, classify_precision, classify_sequence, model_covariance
from cmseq.blockmat import Direction, schur_window_classify, structure_classify
from cmseq.default import (CLASSIFY_TOL, DEFAULT_SAMPLES, DEFAULT_SEED, DEFAULT_TOL, MC_SIGMAS, TOLERANCE_ENV,
                           default_tolerance)
from cmseq.exceptions import CmseqError, ValidationError
from cmseq.log import report_error
from cmseq.models import (CML0k2Model, CMcModel, MarkovModel, Model, check_intersection_conditions,
                          check_markov_condition, check_reciprocal_condition, check_window_cmf_condition,
                          to_origin_form)
from cmseq.output.terminal import TerminalPrinter
from cmseq.printer import Printer
from cmseq.report import Check, Report
from cmseq.serialization import (FORMAT_VERSION, dumps, encode_block, encode_boundary, endpoint_joint_from_dict,
                                 is_representation, load_json, load_matrix, load_model, matrix_to_dict,
                                 model_digest, model_from_dict, model_to_dict, representation_from_dict,
                                 representation_to_dict, save_json, write_trajectories_csv)
from cmseq.simulate import EndpointJoint, destination_directed_generate, monte_carlo_report, sample_trajectories
from cmseq.transforms import (classify_representation, cm_model_from_covariance, construct_from_representation,
                              decompose_to_representation, induce_cml_from_markov, markov_matching_boundary,
                              recover_markov_from_reciprocal_cml)


@dataclass
class CliConfig:
    command: str
    input: Optional[Path] = None
    output: Optional[Path] = None
    tol: float = DEFAULT_TOL
    seed: int = DEFAULT_SEED
    samples: int = DEFAULT_SAMPLES
    k1: Optional[int] = None
    k2: Optional[int] = None

    def __post_init__(self):
        if self.tol <= 0:
            raise ValidationError(f"Tolerance must be positive, got {self.tol}")
        if self.input is not None and self.output is not None \
                and Path(self.input).resolve() == Path(self.output).resolve():
            raise ValidationError(f"Input and output both refer to {self.input}")
        if self.samples < 1:
            raise ValidationError(f"Sample count must be positive, got {self.samples}")


def emit(data: Any, output: Optional[Path]):
    if output is None:
        click.echo(dumps(data), nl=False)
    else:
        save_json(data, output)


def _require(model: Model, kind: type, command: str):
    if not isinstance(model, kind):
        raise ValidationError(f"`{command}` expects a {kind.__name__}, got a {model.kind} model")
    return model


def model_report(m: Model, tol: float, k1: Optional[int] = None) -> Report:
    """Class-membership report of a model: validity plus every condition that applies to its kind."""
    report = Report(title=f"{m.kind} model", summary={'kind': m.kind, 'N': m.N, 'd': m.d, 'tolerance': tol})
    validation = m.validate()
    report.append(Check('valid', bool(validation), detail="" if validation else str(validation)))
    report.summary['valid'] = bool(validation)
    if not validation:
        return report
    report.summary['model_digest'] = model_digest(m)

    if isinstance(m, MarkovModel):
        report.summary.update(reciprocal=True, markov=True)
        if m.start == 0:
            induced = check_reciprocal_condition(induce_cml_from_markov(m), tol)
            induced.name = 'induced_reciprocal'
            report.append(induced)

    elif isinstance(m, CMcModel):
        reciprocal = check_reciprocal_condition(m, tol)
        report.append(reciprocal)
        report.summary['reciprocal'] = bool(reciprocal)

        if m.direction is Direction.L:
            indices = [k1] if k1 is not None else list(range(1, m.N - 2))
            for index in indices:
                report.append(check_window_cmf_condition(m, index, tol))

        if m.direction is Direction.F or m.boundary is not None:
            markov = check_markov_condition(m, tol)
            report.append(markov)
            report.summary['markov'] = bool(markov)
        else:
            report.summary['markov'] = None

        if m.boundary is not None:
            report.summary['representation'] = classify_representation(decompose_to_representation(m), tol).value

    elif isinstance(m, CML0k2Model):
        intersection = check_intersection_conditions(m, tol)
        report.append(intersection)
        precision = assemble_precision(m)
        structure = structure_classify(precision, tol)
        report.append(Check('cml_form', structure.is_cml_form, {'max': structure.residuals['cml']},
                            tol, structure.threshold))
        window = schur_window_classify(precision, 0, m.k2, Direction.L, tol)
        report.append(Check(f'window_cml[0,{m.k2}]', window, tolerance=tol))
        report.summary.update(intersection=bool(intersection), cml=structure.is_cml_form, window_cml=window)

    return report


def print_reports(reports: list[Report], text: bool, json_path: Optional[Path], junit_path: Optional[Path]):
    printers: list[Printer] = []
    if text:
        printers.append(TerminalPrinter())
    if json_path:
        from cmseq.output.json import JSONPrinter
        printers.append(JSONPrinter(json_path))
    if junit_path:
        from cmseq.output.junit import JUnitPrinter
        printers.append(JUnitPrinter(junit_path))

    for printer in printers:
        printer.print(reports)
    if not text:
        emit(reports[0].to_dict() if len(reports) == 1 else [report.to_dict() for report in reports], None)


existing_file = click.Path(exists=True, dir_okay=False, path_type=Path)
new_file = click.Path(dir_okay=False, path_type=Path)


def input_option(name: str = "--in", dest: str = "input_path", help_text: str = "Input JSON file"):
    return click.option(name, dest, type=existing_file, required=True, help=help_text)


def output_option(help_text: str = "Output file, stdout when omitted"):
    return click.option("--out", "output_path", type=new_file, default=None, help=help_text)


def tol_option(fallback: float = DEFAULT_TOL):
    return click.option("--tol", type=float, default=partial(default_tolerance, fallback), show_default=str(fallback),
                        help=f"Relative tolerance, the {TOLERANCE_ENV} environment variable overrides the default")


def report_options(function):
    function = click.option("--text", is_flag=True, default=False, help="Print a human readable report")(function)
    function = click.option("--json", "json_path", type=new_file, default=None,
                            help="Write the JSON report here")(function)
    return click.option("--junit-xml", "junit_path", type=new_file, default=None,
                        help="Write a JUnit style XML report here")(function)


@click.group()
@click.option("--verbose", type=bool, is_flag=True, default=False, help="Be more verbose")
def cli(verbose: bool = False):
    """Conditionally Markov, reciprocal and Markov Gaussian sequence models."""
    if verbose:
        logging.root.setLevel(logging.DEBUG)


@cli.command()
@input_option(help_text="Markov model file")
@output_option()
@click.option("--with-boundary", is_flag=True, default=False, help="Attach the boundary reproducing the Markov law")
def induce(input_path: Path, output_path: Optional[Path], with_boundary: bool):
    """Induced reciprocal CM_L model of a Markov model."""
    CliConfig('induce', input_path, output_path)
    markov = _require(load_model(input_path), MarkovModel, 'induce')
    induced = induce_cml_from_markov(markov)
    if with_boundary:
        induced = induced.with_boundary(markov_matching_boundary(markov))
    emit(model_to_dict(induced), output_path)


@cli.command()
@input_option(help_text="Markov model file")
@output_option()
def boundary(input_path: Path, output_path: Optional[Path]):
    """CM_L boundary that keeps the induced model Markov, in both endpoint forms."""
    CliConfig('boundary', input_path, output_path)
    markov = _require(load_model(input_path), MarkovModel, 'boundary')
    matching = markov_matching_boundary(markov)
    origin = to_origin_form(matching)
    emit({'format': FORMAT_VERSION,
          'boundary': encode_boundary(matching),
          'origin_form': {'origin_cov': encode_block(origin.origin_cov),
                          'destination_gain': encode_block(origin.destination_gain),
                          'destination_noise_cov': encode_block(origin.destination_noise_cov)}},
         output_path)


@cli.command()
@input_option(help_text="Reciprocal CM_L model file with a Markov boundary")
@output_option()
@tol_option()
def recover(input_path: Path, output_path: Optional[Path], tol: float):
    """Markov model with the law of a reciprocal CM_L model."""
    CliConfig('recover', input_path, output_path, tol)
    model = _require(load_model(input_path), CMcModel, 'recover')
    emit(model_to_dict(recover_markov_from_reciprocal_cml(model, tol)), output_path)


@cli.command()
@input_option(help_text="CM_c model file, or a covariance matrix file with --from-covariance")
@output_option()
@click.option("--from-covariance", is_flag=True, default=False, help="Input is a joint covariance matrix")
@click.option("--direction", type=click.Choice(["L", "F"]), default="L", show_default=True,
              help="CM_c direction used with --from-covariance")
def decompose(input_path: Path, output_path: Optional[Path], from_covariance: bool, direction: str):
    """Underlying Markov model, weights and endpoint covariance of a CM_c model."""
    CliConfig('decompose', input_path, output_path)
    if from_covariance:
        model = cm_model_from_covariance(load_matrix(input_path), Direction(direction))
    else:
        model = _require(load_model(input_path), CMcModel, 'decompose')
    emit(representation_to_dict(decompose_to_representation(model)), output_path)


@cli.command()
@input_option(help_text="Representation file")
@output_option()
def construct(input_path: Path, output_path: Optional[Path]):
    """CM_c model of an underlying Markov model plus a weighted endpoint."""
    CliConfig('construct', input_path, output_path)
    emit(model_to_dict(construct_from_representation(representation_from_dict(load_json(input_path), input_path))),
         output_path)


@cli.command()
@input_option(help_text="Model or representation file")
@tol_option()
@click.option("--k1", type=int, default=None, help="Only test this [k1,N]-CM_F window")
@report_options
def check(input_path: Path, tol: float, k1: Optional[int], text: bool, json_path: Optional[Path],
          junit_path: Optional[Path]) -> int:
    """Class-membership conditions of a model; failed conditions are verdicts, an invalid model exits 1."""
    CliConfig('check', input_path, None, tol, k1=k1)
    data = load_json(input_path)
    if is_representation(data):
        representation = representation_from_dict(data, input_path)
        model: Model = construct_from_representation(representation)
        report = model_report(model, tol, k1)
        report.summary['representation'] = classify_representation(representation, tol).value
    else:
        report = model_report(model_from_dict(data, input_path), tol, k1)
    print_reports([report], text, json_path, junit_path)
    if not report.summary['valid']:
        logging.error("%s is not a valid model: %s", input_path, report['valid'].detail)
        return 1
    return 0


@cli.command()
@input_option(help_text="Model file")
@output_option()
@click.option("--covariance", is_flag=True, default=False, help="Write the joint covariance instead")
def assemble(input_path: Path, output_path: Optional[Path], covariance: bool):
    """Joint precision (or covariance) matrix of a model."""
    CliConfig('assemble', input_path, output_path)
    model = load_model(input_path)
    matrix = model_covariance(model) if covariance else assemble_precision(model)
    emit(matrix_to_dict(matrix), output_path)


@cli.command()
@input_option(help_text="Block matrix file")
@tol_option(CLASSIFY_TOL)
@click.option("--precision", is_flag=True, default=False, help="Input is a precision matrix, not a covariance")
def classify(input_path: Path, tol: float, precision: bool):
    """Markov, reciprocal, CM_L and CM_F membership of a covariance or precision matrix."""
    CliConfig('classify', input_path, None, tol)
    matrix = load_matrix(input_path)
    result = classify_precision(matrix, tol) if precision else classify_sequence(matrix, tol)
    emit(result.to_dict(), None)


@cli.command()
@input_option(help_text="Model file")
@click.option("--out", "output_path", type=new_file, required=True, help="Trajectory CSV file")
@click.option("--samples", type=int, default=DEFAULT_SAMPLES, show_default=True, help="Number of trajectories")
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True, help="Noise seed")
def sample(input_path: Path, output_path: Path, samples: int, seed: int):
    """Seeded trajectories of a model as CSV."""
    config = CliConfig('sample', input_path, output_path, seed=seed, samples=samples)
    batch = sample_trajectories(load_model(input_path), config.samples, config.seed)
    write_trajectories_csv(batch.data, output_path, batch.start)


@cli.command(name="mc-verify")
@input_option(help_text="Model file")
@click.option("--samples", type=int, default=DEFAULT_SAMPLES, show_default=True, help="Number of trajectories")
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True, help="Noise seed")
@click.option("--sigmas", type=float, default=MC_SIGMAS, show_default=True, help="Allowed standard errors per entry")
@report_options
def mc_verify(input_path: Path, samples: int, seed: int, sigmas: float, text: bool, json_path: Optional[Path],
              junit_path: Optional[Path]) -> int:
    """Sample covariance against the exact joint covariance of a model."""
    config = CliConfig('mc-verify', input_path, seed=seed, samples=samples)
    report = monte_carlo_report(load_model(input_path), config.samples, config.seed, sigmas)
    print_reports([report], text, json_path, junit_path)
    return 0 if report else 2


@cli.command()
@click.option("--motion", "motion_path", type=existing_file, required=True, help="Markov motion model file")
@click.option("--endpoints", "endpoints_path", type=existing_file, default=None,
              help="Endpoint joint (cov_x0, cov_xN, cross); the motion model's own when omitted")
@click.option("--out-model", "model_path", type=new_file, default=None, help="Output CM_L model file")
@click.option("--out", "output_path", type=new_file, required=True, help="Trajectory CSV file")
@click.option("--samples", type=int, default=DEFAULT_SAMPLES, show_default=True, help="Number of trajectories")
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True, help="Noise seed")
def destgen(motion_path: Path, endpoints_path: Optional[Path], model_path: Optional[Path], output_path: Path,
            samples: int, seed: int):
    """Destination-directed trajectories: Markov motion between endpoints with a chosen joint law."""
    config = CliConfig('destgen', motion_path, output_path, seed=seed, samples=samples)
    motion = _require(load_model(motion_path), MarkovModel, 'destgen')
    if endpoints_path is None:
        joint = EndpointJoint.of_markov(motion)
    else:
        joint = EndpointJoint(*endpoint_joint_from_dict(load_json(endpoints_path), endpoints_path))

    model, batch = destination_directed_generate(motion, joint, config.samples, config.seed)
    if model_path is not None:
        save_json(model_to_dict(model), model_path)
    write_trajectories_csv(batch.data, output_path, batch.start)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Runs one subcommand and maps errors to exit codes: 1 for invalid input, 2 for numerical failures."""
    try:
        result = cli.main(args=list(argv) if argv is not None else None, prog_name="cmseq", standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except CmseqError as exc:
        return report_error(exc)
    return result if isinstance(result, int) else 0
