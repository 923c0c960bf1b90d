import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import django
import numpy as np
import scipy
from django.conf import settings

import config
from apps.core.exceptions import (
    EXIT_CONFIG_ERROR, BranchError, ParamError, PredpackError,
)
from apps.core.exporters import read_json, write_json
from apps.core.params import StatePoint
from apps.core.serializers import HypothesisReportSerializer, error_field
from apps.core.services import check_hypotheses, reaction_jacobian
from apps.grids.exporters import write_spectrum_json
from apps.grids.services import modes_below, neumann_spectrum

from .serializers import ScenarioConfigSerializer

logger = logging.getLogger(__name__)


@dataclass
class ScenarioOutcome:
    exit_code: int
    output_dir: Path
    artifacts: List[str] = field(default_factory=list)
    error: Optional[dict] = None
    summary: dict = field(default_factory=dict)


def set_override(data: dict, assignment: str):
    """Apply one ``dotted.key=value`` override; values parse as JSON when they can"""
    key, sep, raw = assignment.partition('=')
    if not sep or not key:
        raise ParamError(f"override {assignment!r} is not key=value", field='set')
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    if isinstance(value, (dict, list)):
        raise ParamError(f"--set only overrides scalar fields ({key})", field=key)
    target = data
    parts = key.split('.')
    for part in parts[:-1]:
        target = target.setdefault(part, {})
        if not isinstance(target, dict):
            raise ParamError(f"{part} is not a section", field=key)
    if isinstance(target.get(parts[-1]), (dict, list)):
        raise ParamError(f"--set only overrides scalar fields ({key})", field=key)
    target[parts[-1]] = value
    return data


def load_config(path, overrides=()):
    path = Path(path)
    if not path.is_file():
        raise ParamError(f"config file {path} does not exist", field='config')
    try:
        data = read_json(path)
    except ValueError as e:
        raise ParamError(f"config file {path} is not valid JSON: {e}", field='config')
    if not isinstance(data, dict):
        raise ParamError(f"config file {path} must hold a JSON object", field='config')
    for assignment in overrides:
        set_override(data, assignment)
    return data


def parse_config(data) -> ScenarioConfigSerializer:
    """Validated serializer, or ParamError naming the first offending field"""
    serializer = ScenarioConfigSerializer(data=data)
    if not serializer.is_valid():
        name, message = error_field(serializer.errors)
        raise ParamError(message, field=name)
    return serializer


def versions():
    return {
        'predpack': config.__version__,
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'django': django.get_version(),
    }


def read_manifest(path):
    """Manifest of a finished run; ``path`` is the run directory or the manifest itself"""
    path = Path(path)
    if path.is_dir():
        path = path / 'manifest.json'
    if not path.is_file():
        raise ParamError(f"no run manifest at {path}", field='manifest')
    return read_json(path)


class ScenarioService:
    """Runs one named scenario and writes its manifest and artifacts"""

    def __init__(self, output_root=None):
        self.output_root = Path(output_root or getattr(settings, 'PREDPACK_OUTPUT_ROOT', 'runs'))

    def output_dir_for(self, data, out=None):
        if out:
            return Path(out)
        if isinstance(data, dict) and data.get('output_dir'):
            return Path(data['output_dir'])
        scenario = data.get('scenario', 'unknown') if isinstance(data, dict) else 'unknown'
        return self.output_root / str(scenario)

    def run_scenario(self, data, out=None) -> ScenarioOutcome:
        out_dir = self.output_dir_for(data, out)
        out_dir.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        outcome = ScenarioOutcome(exit_code=0, output_dir=out_dir)
        inputs = data
        seed = data.get('seed', 0) if isinstance(data, dict) else 0
        scenario = data.get('scenario') if isinstance(data, dict) else None

        try:
            serializer = parse_config(data)
            cfg = serializer.validated_data
            inputs, seed, scenario = _plain(cfg), cfg['seed'], cfg['scenario']
            logger.info(f"scenario {scenario} started (seed {seed}) -> {out_dir}")
            handler = getattr(self, f'run_{scenario}')
            outcome.artifacts, outcome.summary = handler(serializer, out_dir)
        except PredpackError as e:
            outcome.exit_code = e.exit_code
            outcome.error = e.to_dict()
        except np.linalg.LinAlgError as e:
            outcome.exit_code = PredpackError.exit_code
            outcome.error = PredpackError(f"linear algebra failure: {e}").to_dict()

        self.finish(scenario, inputs, seed, outcome, time.perf_counter() - started)
        return outcome

    def report_failure(self, scenario, error: PredpackError, out=None) -> ScenarioOutcome:
        """Write error.json and a manifest for a run that never started"""
        out_dir = self.output_dir_for({'scenario': scenario}, out)
        out_dir.mkdir(parents=True, exist_ok=True)
        outcome = ScenarioOutcome(exit_code=error.exit_code, output_dir=out_dir,
                                  error=error.to_dict())
        self.finish(scenario, {}, 0, outcome, 0.0)
        return outcome

    def finish(self, scenario, inputs, seed, outcome, wall_time):
        out_dir = outcome.output_dir
        if outcome.error:
            write_json(out_dir / 'error.json', outcome.error)
            outcome.artifacts.append('error.json')
            logger.error(f"scenario {scenario} failed: {outcome.error['error']['message']}")

        write_json(out_dir / 'manifest.json', {
            'scenario': scenario,
            'inputs': inputs,
            'seed': seed,
            'versions': versions(),
            'wall_time': wall_time,
            'status': run_status(outcome.exit_code),
            'exit_code': outcome.exit_code,
            'artifacts': sorted(outcome.artifacts + ['manifest.json']),
            'summary': outcome.summary,
        })
        self.record(scenario, inputs, seed, outcome, wall_time)
        logger.info(f"scenario {scenario} finished with exit code {outcome.exit_code} "
                    f"in {wall_time:.2f}s")

    def record(self, scenario, inputs, seed, outcome, wall_time):
        """Best-effort audit row; a database failure never changes the exit status"""
        try:
            from .models import ScenarioRun

            ScenarioRun.objects.create(
                scenario=scenario or '', config=inputs if isinstance(inputs, dict) else {},
                seed=seed if isinstance(seed, int) else 0, status=run_status(outcome.exit_code),
                exit_code=outcome.exit_code, wall_time=wall_time,
                output_dir=str(outcome.output_dir), error=outcome.error)
        except Exception as e:
            logger.warning(f"could not record scenario run: {e}")

    # scenarios

    def run_evolve(self, serializer, out_dir):
        from apps.evolution.exporters import read_state_csv, write_samples_csv, write_state_csv
        from apps.evolution.serializers import (
            EvolveReportSerializer, HomogenizationVerdictSerializer, SigmaCriterionSerializer,
        )
        from apps.evolution.services import (
            BoundMonitor, SystemState, homogenization_check, ode_trajectory, run, sigma_criterion,
        )

        cfg = serializer.validated_data
        opts = cfg['options']
        params, grid = serializer.to_params(), serializer.to_grid()
        if cfg.get('initial_state'):
            state0 = read_state_csv(cfg['initial_state'], grid)
        else:
            point = opts.get('initial_point')
            point = (StatePoint(w=point['w'], u=point['u']) if point
                     else StatePoint(w=(1.0,) * params.n_predators, u=1.0))
            if len(point.w) != params.n_predators:
                raise ParamError(f"initial point needs {params.n_predators} predator values",
                                 field='options.initial_point')
            state0 = SystemState.constant(grid, point)
            state0 = perturb(state0, opts['perturbation'], cfg['seed'])

        criterion = None
        try:
            criterion = sigma_criterion(params, neumann_spectrum(grid, min(grid.size, 4)))
        except ParamError as e:
            logger.info(f"no sigma criterion: {e.message}")
        sigma = criterion.sigma if criterion else None
        sigma_prime = sigma / 2 if sigma is not None and sigma > 0 else None

        monitors = [BoundMonitor(params, epsilon=opts['epsilon'])]
        report = run(params, state0, opts['t_end'], opts['sample_every'], monitors=monitors,
                     window=opts['window'], snapshot_every=opts.get('snapshot_every'),
                     snapshot_dir=out_dir, sigma=sigma, sigma_prime=sigma_prime)
        ode = ode_trajectory(params, state0.means(), opts['t_end'])

        document = dict(EvolveReportSerializer(report).data)
        document['ode_final_means'] = ode.values[-1].tolist()
        document['ode_gap'] = float(np.abs(ode.values[-1] - report.final_state.means()).max())
        if criterion:
            document['sigma_criterion'] = SigmaCriterionSerializer(criterion).data
        if sigma_prime:
            try:
                verdict = homogenization_check(report, sigma_prime)
                document['homogenization'] = HomogenizationVerdictSerializer(verdict).data
            except PredpackError as e:
                logger.warning(f"homogenization check skipped: {e.message}")

        write_samples_csv(out_dir / 'samples.csv', report.samples)
        write_state_csv(out_dir / 'final_state.csv', report.final_state)
        write_json(out_dir / 'evolve_report.json', document)
        artifacts = ['evolve_report.json', 'final_state.csv', 'samples.csv'] + report.snapshot_files
        return artifacts, {'final_time': report.final_state.t,
                           'bound_violations': len(report.bound_violations)}

    def run_equilibria(self, serializer, out_dir):
        from apps.equilibria.serializers import CatalogEntrySerializer, RigidityScanSerializer
        from apps.equilibria.services import (
            NewtonSolver, constant_catalog, constant_stability, simple_stability_threshold,
            small_beta_rigidity_scan,
        )

        opts = serializer.validated_data['options']
        params, grid = serializer.to_params(), serializer.to_grid()
        catalog = constant_catalog(params)
        ceiling = max(2 * np.linalg.norm(reaction_jacobian(params, c.point), 2) for c in catalog)
        spectrum = modes_below(grid, ceiling / params.diffusivities.min(),
                               opts['spectrum_source'])
        entries = [CatalogEntrySerializer((c, constant_stability(params, c, spectrum))).data
                   for c in catalog]
        thresholds = {}
        if params.n_predators > 1:
            for i in range(params.n_predators):
                if params.viability[i] > 0:
                    thresholds[f'SIMPLE({i + 1})'] = {
                        f'w{j + 1}': beta for j, beta in simple_stability_threshold(params, i)}
        document = {'catalog': entries, 'thresholds': thresholds,
                    'hypotheses': HypothesisReportSerializer(check_hypotheses(params)).data}
        if opts.get('trials') and params.is_symmetric_pair:
            solver = NewtonSolver(tol=opts.get('newton_tol'), cond_limit=0)
            scan = small_beta_rigidity_scan(params, grid, trials=opts['trials'],
                                            seed=serializer.validated_data['seed'], solver=solver)
            document['rigidity_scan'] = RigidityScanSerializer(scan).data
        write_json(out_dir / 'catalog.json', document)
        return ['catalog.json'], {'constants': len(entries),
                                  'max_residual': max(c.residual for c in catalog)}

    def _bifurcation_spectrum(self, params, grid, opts):
        if params.mu > 0:
            ceiling = params.viability[0] / (params.mu * params.d[0])
            return modes_below(grid, ceiling, opts['spectrum_source'])
        return neumann_spectrum(grid, min(grid.size, opts['modes']), opts['spectrum_source'])

    def run_bifurcate(self, serializer, out_dir):
        from apps.continuation.serializers import BifurcationPointSerializer
        from apps.continuation.services import bifurcation_points

        opts = serializer.validated_data['options']
        params, grid = serializer.to_params(), serializer.to_grid()
        spectrum = self._bifurcation_spectrum(params, grid, opts)
        points = bifurcation_points(params, spectrum)
        write_json(out_dir / 'bifurcation.json', {
            'points': BifurcationPointSerializer(points, many=True).data,
            'spectrum_source': spectrum.source,
        })
        write_spectrum_json(out_dir / 'spectrum.json', spectrum)
        return ['bifurcation.json', 'spectrum.json'], {'points': len(points)}

    def _continue(self, serializer):
        from apps.continuation.services import (
            ContinuationConfig, bifurcation_points, continue_branch, start_branch,
        )

        opts = serializer.validated_data['options']
        params, grid = serializer.to_params(), serializer.to_grid()
        spectrum = self._bifurcation_spectrum(params, grid, opts)
        points = {bp.n: bp for bp in bifurcation_points(params, spectrum)}
        if opts['mode'] not in points:
            raise BranchError(f"mode {opts['mode']} does not bifurcate (admissible: "
                              f"{sorted(points)})", field='options.mode')
        origin = points[opts['mode']]
        config = ContinuationConfig(ds0=opts['ds0'], beta_max=opts.get('beta_max'),
                                    max_steps=opts.get('max_steps'),
                                    newton_tol=opts.get('newton_tol'))
        start = start_branch(params, origin, grid, spectrum, eps=opts.get('eps'),
                             delta=opts['delta'], config=config)
        return continue_branch(params, start, direction=opts['direction'], config=config,
                               grid=grid, origin=origin, spectrum=spectrum)

    def run_continue(self, serializer, out_dir):
        from apps.continuation.exporters import write_branch
        from apps.continuation.serializers import BranchSummarySerializer

        branch = self._continue(serializer)
        artifacts = write_branch(out_dir, branch)
        return artifacts, dict(BranchSummarySerializer(branch).data)

    def run_segregate(self, serializer, out_dir):
        from apps.continuation.exporters import read_branch
        from apps.segregation.exporters import (
            write_interfaces_csv, write_report_json, write_sweep_csv,
        )
        from apps.segregation.serializers import ComparabilitySerializer, LipschitzProfileSerializer
        from apps.segregation.services import (
            TailClass, beta_sweep, comparability, energy_slack, lipschitz_profile, range_check,
        )

        opts = serializer.validated_data['options']
        if opts.get('branch_dir'):
            branch = read_branch(opts['branch_dir'])
        else:
            branch = self._continue(serializer)
        report = beta_sweep(branch, opts.get('threshold'))
        extra = {
            'lipschitz': LipschitzProfileSerializer(lipschitz_profile(branch)).data,
            'energy_slack_min': min(energy_slack(branch.params.with_beta(p.beta), branch.grid,
                                                 p.state) for p in branch.points),
            'range_ok': all(range_check(branch.params, p.state).ok for p in branch.points),
        }
        if report.classification is TailClass.SEGREGATING:
            extra['comparability'] = ComparabilitySerializer(comparability(report)).data
        write_report_json(out_dir / 'segregation.json', report, extra)
        write_interfaces_csv(out_dir / 'interfaces.csv', report)
        write_sweep_csv(out_dir / 'sweep.csv', report)
        return (['interfaces.csv', 'segregation.json', 'sweep.csv'],
                {'classification': report.classification.value})

    def run_packs(self, serializer, out_dir):
        from apps.packs.serializers import PackBoundReportSerializer
        from apps.packs.services import gamma_bar, pack_bound

        opts = serializer.validated_data['options']
        params, grid = serializer.to_params(), serializer.to_grid()
        spectrum = modes_below(grid, gamma_bar(params), opts['spectrum_source'])
        report = pack_bound(params, grid, spectrum)
        write_json(out_dir / 'pack_bound.json', PackBoundReportSerializer(report).data)
        write_spectrum_json(out_dir / 'spectrum.json', spectrum)
        return ['pack_bound.json', 'spectrum.json'], {'n_bar_exact': report.n_bar_exact}

    def run_optimize(self, serializer, out_dir):
        from apps.evolution.exporters import write_state_csv
        from apps.packs.exporters import write_population_curves
        from apps.packs.serializers import OptimReportSerializer
        from apps.packs.services import optimize_packs

        opts = serializer.validated_data['options']
        params, grid = serializer.to_params(), serializer.to_grid()
        report = optimize_packs(params, grid, opts['n_max'], opts['beta_grid'], opts['t_max'],
                                opts.get('newton_tol'))
        write_json(out_dir / 'optimize.json', OptimReportSerializer(report).data)
        write_population_curves(out_dir / 'population.csv', report)
        artifacts = ['optimize.json', 'population.csv']
        if report.best is not None:
            write_state_csv(out_dir / 'best_state.csv', report.best.state)
            artifacts.append('best_state.csv')
        return artifacts, {'best_n': report.best.n if report.best else None,
                           'alternative': report.alternative}

    # diagnostics

    def validate(self, data) -> List[dict]:
        """Problems worth knowing before a run; an empty list means a clean config"""
        try:
            serializer = parse_config(data)
        except ParamError as e:
            return [{'level': 'error', 'field': e.field, 'message': e.message}]
        scenario = serializer.validated_data['scenario']
        params, grid = serializer.to_params(), serializer.to_grid()
        diagnostics = []

        for i, holds in enumerate(params.viability > 0):
            if not holds:
                diagnostics.append({'level': 'warning', 'field': 'params',
                                    'message': f"viability lambda k > mu omega fails for predator {i + 1}; "
                                               f"it goes extinct"})
        if params.mu == 0:
            if scenario in ('packs', 'optimize'):
                level = 'error' if scenario == 'packs' else 'info'
                diagnostics.append({'level': level, 'field': 'params.mu',
                                    'message': "gamma_bar undefined (mu = 0)"})
            if scenario == 'segregate':
                diagnostics.append({'level': 'info', 'field': 'params.mu',
                                    'message': "no collapsing limit lambda/mu when mu = 0"})
        elif params.viability.max() > 0:
            ceiling = float(max(params.viability / (np.asarray(params.d) * params.mu)))
            report = check_hypotheses(params, modes_below(grid, ceiling, extra=2))
            for i, n in report.resonant_modes:
                diagnostics.append({'level': 'warning', 'field': 'params',
                                    'message': f"resonance: predator {i + 1} rate matches "
                                               f"Neumann eigenvalue n={n}", 'n': n})
        if scenario in ('bifurcate', 'continue', 'segregate') and not params.is_symmetric_pair:
            diagnostics.append({'level': 'error', 'field': 'params',
                                'message': f"{scenario} needs a symmetric pair of identical "
                                           f"predators"})
        return diagnostics


def perturb(state, amplitude, seed):
    """Multiply every field by 1 + amplitude * (random mix of the first three cosines)"""
    if not amplitude:
        return state
    from apps.evolution.services import SystemState

    grid = state.grid
    rng = np.random.default_rng(seed)
    (left, right) = grid.extents[0]
    x = (grid.nodes[:, 0] - left) / (right - left)
    fields = []
    for f in state.fields:
        weights = rng.uniform(-1.0, 1.0, 3) / 3.0
        shape = sum(c * np.cos((m + 1) * np.pi * x) for m, c in enumerate(weights))
        fields.append(f * (1.0 + amplitude * shape))
    return SystemState(grid=grid, w=np.array(fields[:-1]), u=fields[-1], t=state.t)


def _plain(value):
    if isinstance(value, dict):
        return {key: _plain(v) for key, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def run_status(exit_code):
    if exit_code == 0:
        return 'success'
    if exit_code == EXIT_CONFIG_ERROR:
        return 'config_error'
    return 'numerical_failure'
