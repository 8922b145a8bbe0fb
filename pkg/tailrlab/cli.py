"""
Command-line experiment runner.

Every subcommand reads a RunConfig, writes CSV/JSON (and optionally SVG) files under the run's
output directory and finishes with manifest.json listing each file with its SHA-256.
"""
import argparse
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from tailrlab import __version__, bounds, plots
from tailrlab.config import RunConfig, inject_fault, load_run_config, log_level
from tailrlab.distributions import proxy_bias, proxy_variance
from tailrlab.form import ConfigValidationError, resolve_config
from tailrlab.metrics import METRIC_HEADER, generation_reports, paired_bootstrap
from tailrlab.model.core import SequenceModel, perplexity, sample_many, sequence_logprobs, step_dist
from tailrlab.objectives import ObjectiveSpec, weight_curve
from tailrlab.outcome import Outcome, emit, error_handler, ok
from tailrlab.seeding import substream
from tailrlab.serialization import CamelCaseAttributesMixin, bytes_hash, content_hash, to_json, write_atomic, \
    write_csv
from tailrlab.synth.core import bodies, write_dataset
from tailrlab.synth.exacc import EXACC_HEADER, exacc_report, exacc_rows
from tailrlab.synth.gaussian import CURVE_HEADER, FIT_HEADER, density_curves, toy_gaussian_fit
from tailrlab.synth.perturb import (ERROR_MAP_HEADER, LENGTH_HEADER, build_traces, error_map,
                                    max_overestimation_by_length, overestimation_slope, variant_nll, write_traces)
from tailrlab.synth.pipeline import Workspace

logger = logging.getLogger(__name__)

BOOTSTRAP_RESAMPLES = 1000
SIGNIFICANCE_HEADER = ('baseline', 'objective', 'metric', 'mean_difference', 'p_value', 'resamples')
SLOPE_HEADER = ('objective', 'slope', 'variant_nll', 'origins', 'steps')
BIAS_VARIANCE_HEADER = ('gamma', 'bias', 'variance')


class RunManifest(CamelCaseAttributesMixin):
    """
    Record of one run: what produced it and a content hash for every file it wrote.
    """

    def __init__(self, command: str, config_hash: str, started: str, finished: str, files: List[Dict[str, str]]):
        self.command = command
        self.tool_version = __version__
        self.config_hash = config_hash
        self.started = started
        self.finished = finished
        self.files = files

    @classmethod
    def build(cls, command: str, config: RunConfig, started: datetime, root: Path, paths: Sequence[Path]):
        files = []
        for path in sorted(set(paths)):
            files.append({'path': Path(path).relative_to(root).as_posix(), 'sha256': content_hash(path)})
        return cls(command, config_hash(config), started.isoformat(), _now().isoformat(), files)

    def verify(self, root: Path) -> List[str]:
        """
        :return: Relative paths whose current content no longer matches the recorded hash
        """
        return [entry['path'] for entry in self.files if content_hash(root / entry['path']) != entry['sha256']]


def _now() -> datetime:
    return datetime.now(timezone.utc)


def config_hash(config: RunConfig) -> str:
    return bytes_hash(to_json(config.dict()).encode('utf-8'))


class Outputs:
    """
    Collects the files a subcommand writes under the run directory.
    """

    def __init__(self, root: Path, plots_enabled: bool):
        self.root = root
        self.plots_enabled = plots_enabled
        self.paths: List[Path] = []

    def csv(self, name: str, header: Sequence[str], rows) -> Path:
        return self.add(write_csv(self.root / name, header, rows))

    def json(self, name: str, value) -> Path:
        return self.add(write_atomic(self.root / name, to_json(value)))

    def plot(self, draw: Callable, name: str, *args):
        if self.plots_enabled:
            self.add(draw(*args, self.root / name) if args else draw(self.root / name))

    def add(self, path: Path) -> Path:
        self.paths.append(Path(path))
        return Path(path)


def cmd_verify(config: RunConfig, outputs: Outputs):
    reports = bounds.run_suite(config.verify.trials, config.seed, inject_fault())
    outputs.csv('bounds.csv', bounds.REPORT_HEADER, [report.row() for report in reports])
    for report in reports:
        logger.info('%s: max violation %.3g (tolerance %.0e) %s', report.name, report.max_violation,
                    report.tolerance, 'pass' if report.passed else 'FAIL')
    failed = bounds.failures(reports)
    if failed:
        raise bounds.VerificationFailedError(failed)


def cmd_toy_gaussian(config: RunConfig, outputs: Outputs):
    toy = config.toy_gaussian
    fits = [toy_gaussian_fit(toy.mixture, objective, toy.grid, toy.descent, toy.void_threshold)
            for objective in ('kld', 'tvd')]
    outputs.csv('toy_gaussian_fit.csv', FIT_HEADER, [fit.row() for fit in fits])
    curves = density_curves(toy.mixture, toy.grid, *fits)
    outputs.csv('toy_gaussian_curves.csv', CURVE_HEADER, curves)
    outputs.plot(plots.density_curves, 'toy_gaussian.svg', curves)
    logger.info('Void mass: KLD fit %.4g, TVD fit %.4g', fits[0].void_mass, fits[1].void_mass)


def _evaluate(config: RunConfig, workspace: Workspace, specs: Sequence[ObjectiveSpec]):
    """
    Trains (or loads) one learner per spec and scores it.

    :return: Metric column names, one result row per learner, metric report rows and the
        per-learner test log-probabilities
    """
    oracle, data = workspace.oracle(), workspace.data()
    settings = config.metrics
    references = bodies(data.test)
    columns: List[str] = []
    rows, metric_rows, test_scores = [], [], {}
    for spec in specs:
        learner = workspace.learner(spec)
        samples = sample_many(learner, settings.samples, config.data.max_len, substream(config.seed, 'samples'))
        truncated = sum(sample.truncated for sample in samples)
        if truncated:
            logger.warning('%d of %d %s samples reached max_len %d without EOS', truncated, len(samples),
                           spec.label, config.data.max_len)
        reports = generation_reports(bodies(samples), references, settings.names, settings.bleu_order,
                                     settings.selfbleu_cap, settings.distinct_order, settings.rep_window,
                                     config.seed)
        columns = [report.column for report in reports]
        rows.append((spec.label, perplexity(oracle, samples), perplexity(learner, data.test))
                    + tuple(report.value for report in reports))
        metric_rows.extend((spec.label,) + report.row() for report in reports)
        test_scores[spec.label] = sequence_logprobs(learner, data.test)
        workspace.files.append(write_dataset(workspace.root / 'samples' / f'{spec.label}.txt', samples))
        logger.info('%s: %s', spec.label, dict(zip(('ppl_oracle', 'ppl_test', *columns), rows[-1][1:])))
    return columns, rows, metric_rows, test_scores


def _significance(scores: Dict[str, np.ndarray], seed: int) -> List[Tuple]:
    labels = list(scores)
    rows = []
    for label in labels[1:]:
        baseline = scores[labels[0]]
        rows.append((labels[0], label, 'test_logprob', float(np.mean(scores[label] - baseline)),
                     paired_bootstrap(scores[label], baseline, BOOTSTRAP_RESAMPLES, seed), BOOTSTRAP_RESAMPLES))
    return rows


def cmd_synth(config: RunConfig, outputs: Outputs):
    workspace = Workspace(config, outputs.root)
    columns, rows, metric_rows, scores = _evaluate(config, workspace, config.objectives)
    outputs.csv('results.csv', ('objective', 'ppl_oracle', 'ppl_test', *columns), rows)
    outputs.csv('metrics.csv', ('objective',) + METRIC_HEADER, metric_rows)
    if len(scores) > 1:
        outputs.csv('significance.csv', SIGNIFICANCE_HEADER, _significance(scores, config.seed))
    outputs.paths.extend(workspace.files)


def cmd_perturb(config: RunConfig, outputs: Outputs):
    workspace = Workspace(config, outputs.root)
    oracle, data = workspace.oracle(), workspace.data()
    settings = config.perturb
    origins = data.test[:settings.origins]
    tables, slopes = {}, []
    for spec in config.objectives:
        learner = workspace.learner(spec)
        traces = build_traces(origins, learner, oracle, settings.steps, settings.kinds, config.seed)
        outputs.add(write_traces(outputs.root / f'traces_{spec.label}.csv', traces))
        grid = error_map(traces, settings.buckets)
        outputs.csv(f'error_map_{spec.label}.csv', ERROR_MAP_HEADER, grid)
        outputs.plot(plots.error_map, f'error_map_{spec.label}.svg', grid)
        tables[spec.label] = max_overestimation_by_length(traces, settings.length_width)
        outputs.csv(f'overestimation_{spec.label}.csv', LENGTH_HEADER, tables[spec.label])
        nll = variant_nll(traces)
        slopes.append((spec.label, overestimation_slope(tables[spec.label]), nll, len(traces), settings.steps))
        logger.info('%s: overestimation slope %.4f, mean perturbed-sample NLL %.4f', spec.label, slopes[-1][1], nll)
    outputs.csv('overestimation_slope.csv', SLOPE_HEADER, slopes)
    outputs.plot(plots.overestimation, 'overestimation.svg', tables)
    outputs.paths.extend(workspace.files)


def cmd_exacc(config: RunConfig, outputs: Outputs):
    workspace = Workspace(config, outputs.root)
    oracle = workspace.oracle()
    settings = config.exacc
    models: List[Tuple[str, SequenceModel]] = [(spec.label, workspace.learner(spec)) for spec in config.objectives]
    if settings.include_oracle:
        models.append(('oracle', oracle))
    rows = []
    for label, model in models:
        reports = [exacc_report(model, oracle, settings.for_length(length), config.seed)
                   for length in settings.context_lengths]
        rows.extend(exacc_rows(label, reports))
        for report in reports:
            logger.info('%s: ExAccErr(%d) = %.2f%%', label, report.context_length, report.percent)
    outputs.csv('exacc.csv', EXACC_HEADER, rows)
    outputs.paths.extend(workspace.files)


def cmd_sweep_gamma(config: RunConfig, outputs: Outputs):
    sweep = config.sweep
    workspace = Workspace(config, outputs.root)
    columns, rows, _, _ = _evaluate(config, workspace, [sweep.objective(gamma) for gamma in sweep.gammas])
    header = ('gamma', 'objective', 'ppl_oracle', 'ppl_test', *columns)
    table = [(gamma,) + row for gamma, row in zip(sweep.gammas, rows)]
    outputs.csv('sweep_gamma.csv', header, table)
    outputs.plot(plots.gamma_sweep, 'sweep_gamma.svg', table, header)

    curve = weight_curve(sweep.gammas, np.linspace(0.0, 1.0, sweep.curve_points))
    outputs.csv('weight_curve.csv', ('gamma', 'p', 'weight'), curve)
    outputs.plot(plots.weight_curve, 'weight_curve.svg', curve)

    # first-step conditionals of the oracle and of the shared learner initialization
    target = step_dist(workspace.oracle(), ())
    base = step_dist(SequenceModel.initialize(config.model, substream(config.seed, 'learner')), ())
    outputs.csv('bias_variance.csv', BIAS_VARIANCE_HEADER,
                [(gamma, proxy_bias(gamma, target, base), proxy_variance(gamma, target)) for gamma in sweep.gammas])
    outputs.paths.extend(workspace.files)


COMMANDS: Dict[str, Callable[[RunConfig, Outputs], None]] = {
    'verify': cmd_verify,
    'toy-gaussian': cmd_toy_gaussian,
    'synth': cmd_synth,
    'perturb': cmd_perturb,
    'exacc': cmd_exacc,
    'sweep-gamma': cmd_sweep_gamma,
}


def apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    """
    Applies the command-line overrides and validates the result like a config file.

    :raises ConfigValidationError: if an override is out of range or names an unknown objective
    """
    data = config.dict()
    if args.seed is not None:
        data['seed'] = args.seed
    if args.out is not None:
        data['out'] = args.out
    if args.no_plots:
        data['plots'] = False
    if args.trials is not None:
        data['verify']['trials'] = args.trials
    config = resolve_config(data, RunConfig)
    if args.objectives:
        try:
            config = config.select([label.strip() for label in args.objectives.split(',') if label.strip()])
        except ValueError as ex:
            raise ConfigValidationError(errors=[{'loc': ('objectives',), 'msg': str(ex)}])
    return config


@error_handler
def run(args: argparse.Namespace) -> Outcome:
    started = _now()
    config = apply_overrides(load_run_config(args.config if args.command != 'init' else None), args)
    root = Path(config.out)

    if args.command == 'init':
        target = Path(args.config) if args.config else root / 'config.json'
        path = write_atomic(target, to_json(config.dict()))
        logger.info('Wrote default configuration to %s', path)
        return ok(f'Wrote {path}', [str(path)])

    outputs = Outputs(root, config.plots)
    outputs.json('run_config.json', config.dict())
    COMMANDS[args.command](config, outputs)
    manifest = RunManifest.build(args.command, config, started, root, outputs.paths)
    path = write_atomic(root / 'manifest.json', to_json(manifest))
    logger.info('%s finished: %d files recorded in %s', args.command, len(manifest.files), path)
    return ok(f'{args.command} completed', [entry['path'] for entry in manifest.files])


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', metavar='PATH', help='JSON run configuration (written by init)')
    common.add_argument('--seed', type=int, help='overrides the configured seed')
    common.add_argument('--out', metavar='DIR', help='overrides the configured output directory')
    common.add_argument('--objectives', metavar='LIST', help='comma separated objective labels to run')
    common.add_argument('--trials', type=int, help='trials per verifier check')
    common.add_argument('--no-plots', action='store_true', help='skip SVG figures')

    parser = argparse.ArgumentParser(prog='tailrlab', description='TaiLr objective laboratory.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True
    descriptions = {
        'init': 'write the default run configuration',
        'verify': 'run the numerical verifier suite',
        'toy-gaussian': 'fit one Gaussian to a mixture under KLD and TVD',
        'synth': 'train learners on oracle data and score them',
        'perturb': 'perturbation traces, error maps and overestimation by length',
        'exacc': 'excess accumulated error on learner-generated prefixes',
        'sweep-gamma': 'train and score TaiLr learners over a list of gammas',
    }
    for name, description in descriptions.items():
        commands.add_parser(name, parents=[common], help=description, description=description)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = log_level()
    if not isinstance(logging.getLevelName(level), int):
        level = 'INFO'
    logging.basicConfig(level=level, stream=sys.stderr,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    return emit(run(args))


if __name__ == '__main__':
    sys.exit(main())
