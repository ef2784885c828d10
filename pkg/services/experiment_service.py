# services/experiment_service.py
"""
Batch front-end: YAML run configurations, solver dispatch, sweeps,
seeded Monte-Carlo trials, bundled reproductions and CSV output.
"""

import csv
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from typing import Any, Callable, Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np
import yaml

from models.allocation import DecodingPermutation
from models.market import Prices
from models.optimization import SubgradientConfig
from models.run_config import (OPTIONAL_NUMERIC, SCENARIO_DEFAULTS, SOLVERS, MonteCarloSettings,
                               ResultRow, RunConfig, SolverSettings, SweepSettings, csv_header)
from services.channel_service import channel_service
from services.errors import ConfigError, SolverError
from services.harvest_service import harvest_service
from services.joint_service import joint_service
from services.noma_service import noma_service
from services.propfair_service import propfair_service
from services.relay_service import relay_service
from services.stackelberg_service import stackelberg_service
from services.tdma_service import tdma_service

logger = logging.getLogger(__name__)

SECTIONS = ('module', 'scenario', 'solver', 'sweep', 'montecarlo', 'output')
REPRODUCTIONS = ('example1', 'example2', 'singleuser-tradeoff', 'relay-baselines', 'stackelberg-prices')

EXAMPLE1_PATHLOSSES = (2.4067e-6, 2.156e-6)
# second user's loss follows the 14 m / 6 m distance ratio at exponent 5.5
EXAMPLE2_PATHLOSSES = (3.7808e-5, 3.5793e-7)
RELAY_PSM_DB = (0.0, 10.0, 20.0, 30.0)
RELAY_EXPONENTS = (2.0, 3.0, 4.0)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


class ExperimentService:

    # ------------------------------------------------------------------
    # configuration
    # ------------------------------------------------------------------
    def load_config(self, path: str) -> RunConfig:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, 'r', encoding='utf-8') as handle:
            text = handle.read()
        try:
            lines = self._key_lines(yaml.compose(text))
            raw = yaml.safe_load(text)
        except yaml.MarkedYAMLError as exc:
            line = exc.problem_mark.line + 1 if exc.problem_mark is not None else None
            raise ConfigError(f"cannot parse {path}: {exc.problem}", line=line) from exc
        return self.parse_config(raw if raw is not None else {}, lines)

    @staticmethod
    def _key_lines(node, prefix: str = '') -> Dict[str, int]:
        """Dotted key path -> 1-based line of that key in the file."""
        lines: Dict[str, int] = {}
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
                lines[path] = key_node.start_mark.line + 1
                lines.update(ExperimentService._key_lines(value_node, path))
        return lines

    def parse_config(self, raw: Dict[str, Any], lines: Optional[Dict[str, int]] = None) -> RunConfig:
        lines = lines or {}

        def fail(message: str, key_path: str):
            raise ConfigError(message, key_path=key_path, line=lines.get(key_path))

        if not isinstance(raw, dict):
            raise ConfigError("a run configuration must be a mapping of sections")
        for key in raw:
            if key not in SECTIONS:
                fail(f"unknown key {key!r}", str(key))
        module = raw.get('module')
        if module not in SOLVERS:
            fail(f"module must be one of {sorted(SOLVERS)}, got {module!r}", 'module')

        scenario = dict(SCENARIO_DEFAULTS[module])
        given = raw.get('scenario') or {}
        if not isinstance(given, dict):
            fail("scenario must be a mapping", 'scenario')
        for key, value in given.items():
            if key not in scenario:
                fail(f"unknown key {key!r} for module {module}", f"scenario.{key}")
            scenario[key] = value

        solver_raw = dict(raw.get('solver') or {})
        allowed = {f.name for f in fields(SolverSettings)}
        for key in solver_raw:
            if key not in allowed:
                fail(f"unknown key {key!r}", f"solver.{key}")
        solver_raw.setdefault('name', SOLVERS[module][0])
        if solver_raw['name'] not in SOLVERS[module]:
            fail(f"solver for {module} must be one of {list(SOLVERS[module])}, got {solver_raw['name']!r}",
                 'solver.name')
        for key in ('tolerance', 'T_step'):
            if key in solver_raw and not (_is_number(solver_raw[key]) and solver_raw[key] > 0):
                fail(f"{key} must be a positive number", f"solver.{key}")
        for key in ('max_iterations', 'K', 'iterations'):
            if key in solver_raw and not (isinstance(solver_raw[key], int) and solver_raw[key] >= 1):
                fail(f"{key} must be a positive integer", f"solver.{key}")
        solver = SolverSettings(**solver_raw)

        sweep = None
        if raw.get('sweep') is not None:
            sweep_raw = raw['sweep']
            if not isinstance(sweep_raw, dict):
                fail("sweep must be a mapping", 'sweep')
            for key in sweep_raw:
                if key not in ('parameter', 'start', 'stop', 'step'):
                    fail(f"unknown key {key!r}", f"sweep.{key}")
            parameter = sweep_raw.get('parameter')
            if parameter not in scenario:
                fail(f"sweep parameter {parameter!r} is not a scenario key of {module}", 'sweep.parameter')
            value = scenario[parameter]
            if not (_is_number(value) or (value is None and parameter in OPTIONAL_NUMERIC)):
                fail(f"sweep parameter {parameter!r} is not numeric", 'sweep.parameter')
            for key in ('start', 'stop', 'step'):
                if not _is_number(sweep_raw.get(key)):
                    fail(f"sweep {key} must be a number", f"sweep.{key}")
            if not sweep_raw['step'] > 0 or sweep_raw['stop'] < sweep_raw['start']:
                fail("sweep needs step > 0 and stop >= start", 'sweep.step')
            sweep = SweepSettings(parameter=parameter, start=float(sweep_raw['start']),
                                  stop=float(sweep_raw['stop']), step=float(sweep_raw['step']))

        mc_raw = raw.get('montecarlo') or {}
        for key in mc_raw:
            if key not in ('trials', 'seed'):
                fail(f"unknown key {key!r}", f"montecarlo.{key}")
        montecarlo = MonteCarloSettings(**mc_raw)
        if not isinstance(montecarlo.trials, int) or montecarlo.trials < 1:
            fail("trials must be an integer >= 1", 'montecarlo.trials')
        if not isinstance(montecarlo.seed, int):
            fail("seed must be an integer", 'montecarlo.seed')

        output = raw.get('output')
        if output is not None and not isinstance(output, str):
            fail("output must be a path", 'output')
        return RunConfig(module=module, scenario=scenario, solver=solver, sweep=sweep,
                         montecarlo=montecarlo, output=output)

    # ------------------------------------------------------------------
    # running
    # ------------------------------------------------------------------
    def run(self, config: RunConfig, command: str = 'solve', jobs: int = 1) -> List[ResultRow]:
        """One row per solve; rows come back in task order whatever the completion order."""
        base = config.montecarlo.seed
        if command == 'solve':
            tasks = [(config.scenario, base, {})]
        elif command == 'sweep':
            if config.sweep is None:
                raise ConfigError("the sweep command needs a sweep section", key_path='sweep')
            tasks = [({**config.scenario, config.sweep.parameter: value}, base,
                      {'sweep': config.sweep.parameter, 'value': value})
                     for value in config.sweep.values()]
        elif command == 'montecarlo':
            tasks = [(config.scenario, base + k, {'trial': k}) for k in range(config.montecarlo.trials)]
        else:
            raise ConfigError(f"unknown command {command!r}")

        def work(task: Tuple[Dict[str, Any], int, Dict[str, Any]]) -> ResultRow:
            scenario, seed, params = task
            return self.solve_one(config.module, config.solver, scenario, seed, params)

        return self._map(work, tasks, jobs)

    @staticmethod
    def _map(work: Callable, tasks: Sequence, jobs: int) -> List:
        if jobs <= 1 or len(tasks) <= 1:
            return [work(task) for task in tasks]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(work, tasks))

    def solve_one(self, module: str, settings: SolverSettings, scenario: Dict[str, Any],
                  seed: int, params: Optional[Dict[str, Any]] = None) -> ResultRow:
        params = dict(params or {})
        try:
            row = getattr(self, f'_solve_{module}')(settings, scenario, seed)
        except ConfigError:
            raise
        except (SolverError, ArithmeticError, ValueError) as exc:
            logger.warning("%s/%s with seed %d failed: %s", module, settings.name, seed, exc)
            return ResultRow.failed(module, settings.name, seed, params)
        row.seed = seed
        row.params = {**params, **row.params}
        return row

    @staticmethod
    def _subgradient(settings: SolverSettings) -> SubgradientConfig:
        return SubgradientConfig(tolerance=settings.tolerance, max_iterations=settings.max_iterations)

    def _network(self, scenario: Dict[str, Any], seed: int):
        common = dict(P0_dbm=float(scenario['P0_dbm']), N0W_dbm=float(scenario['N0W_dbm']),
                      eta1=float(scenario['eta1']), eta2=float(scenario['eta2']))
        if scenario.get('pathlosses'):
            return channel_service.scenario_from_pathloss(list(scenario['pathlosses']), **common)
        return channel_service.sample_scenario(int(scenario['n_users']), seed, **common)

    @staticmethod
    def _network_row(module: str, solver: str, scenario: Dict[str, Any], network, T: float,
                     rates: np.ndarray, objective: float, energy_eff: float,
                     iterations: int = 0, status: str = 'optimal') -> ResultRow:
        return ResultRow(module=module, solver=solver, N=network.n_users,
                         P0_dbm=float(scenario['P0_dbm']), N0W_dbm=float(scenario['N0W_dbm']),
                         eta1=float(scenario['eta1']), eta2=float(scenario['eta2']), T_star=T,
                         rates=tuple(float(r) for r in rates), objective=objective,
                         jain=noma_service.jain_index(rates), energy_eff=energy_eff,
                         iterations=iterations, status=status)

    def _solve_harvest(self, settings: SolverSettings, scenario: Dict[str, Any], seed: int) -> ResultRow:
        if settings.name == 'stochastic':
            kappa, zeta = scenario.get('kappa'), scenario.get('zeta')
            if kappa is None or zeta is None:
                raise ConfigError("the stochastic solver needs kappa and zeta", key_path='scenario')
            T = harvest_service.optimal_T_stochastic_high_snr(float(kappa), float(zeta))
            value = harvest_service.expected_throughput_mc(float(kappa), float(zeta), 'fixed',
                                                           int(scenario['samples']), seed)
            params = {'kappa': float(kappa), 'zeta': float(zeta)}
        else:
            X = float(scenario['X'])
            T = harvest_service.optimal_T_deterministic(X)
            value = harvest_service.throughput_single(X, T)
            params = {'X': X}
        return ResultRow(module='harvest', solver=settings.name, N=1, T_star=T, rates=(value,),
                         objective=value, params=params)

    def _solve_tdma(self, settings: SolverSettings, scenario: Dict[str, Any], seed: int) -> ResultRow:
        network = self._network(scenario, seed)
        if settings.name == 'sum_throughput':
            allocation, objective = tdma_service.solve_sum_throughput(network)
        else:
            allocation, objective = tdma_service.solve_common_throughput(network, self._subgradient(settings))
        rates = tdma_service.user_rates_tdma(network, allocation)
        ee = tdma_service.energy_efficiency(float(rates.sum()), network.P0_watts, allocation.T)
        return self._network_row('tdma', settings.name, scenario, network, allocation.T, rates, objective, ee)

    def _solve_noma(self, settings: SolverSettings, scenario: Dict[str, Any], seed: int) -> ResultRow:
        network = self._network(scenario, seed)
        scheme = settings.name.split('_')[1]
        result = noma_service.solve_scheme(network, scheme, self._subgradient(settings))
        if scheme in ('c', 'd'):
            ee = noma_service.energy_efficiency_eq(network.n_users, result.objective, network.P0_watts, result.T)
        else:
            ee = tdma_service.energy_efficiency(float(result.rates.sum()), network.P0_watts, result.T)
        return self._network_row('noma', settings.name, scenario, network, result.T, result.rates,
                                 result.objective, ee, result.report.iterations, result.report.status)

    def _solve_propfair(self, settings: SolverSettings, scenario: Dict[str, Any], seed: int) -> ResultRow:
        network = self._network(scenario, seed)
        if settings.name == 'pf_tdma':
            solution = propfair_service.solve_pf_tdma(network, self._subgradient(settings))
        else:
            solution = propfair_service.solve_pf_noma_ts(network, self._subgradient(settings))
        ee = tdma_service.energy_efficiency(float(np.sum(solution.rates)), network.P0_watts, solution.T)
        return self._network_row('propfair', settings.name, scenario, network, solution.T, solution.rates,
                                 solution.objective, ee, solution.report.iterations, solution.report.status)

    def _solve_stackelberg(self, settings: SolverSettings, scenario: Dict[str, Any], seed: int) -> ResultRow:
        market = stackelberg_service.sample_market(int(scenario['n_users']), seed, float(scenario['snr_db']))
        prices, demand, report = stackelberg_service.optimal_prices(market, self._subgradient(settings))
        E, q = np.array(demand.E), np.array(demand.q)
        rates = q * np.log2(1.0 + market.gains * E / q)
        return ResultRow(module='stackelberg', solver=settings.name, N=market.n_users, rates=tuple(rates),
                         objective=stackelberg_service.bs_revenue(prices, demand),
                         jain=noma_service.jain_index(rates), iterations=report.iterations,
                         status=report.status, params={'c1': prices.c1, 'c2': prices.c2})

    def _solve_relay(self, settings: SolverSettings, scenario: Dict[str, Any], seed: int) -> ResultRow:
        link = relay_service.relay_geometry(scenario['exponents'], float(scenario['psm_db']), seed)
        config = self._subgradient(settings)
        if settings.name == 'iterative':
            alloc, rate, trajectory = relay_service.solve_iterative(link, settings.iterations, config=config)
            iterations, status = len(trajectory) - 1, 'optimal'
        else:
            alloc, rate, report = relay_service.solve_grid_theta(link, settings.K, config)
            iterations, status = report.iterations, report.status
        return ResultRow(module='relay', solver=settings.name, N=link.n_channels, objective=rate,
                         iterations=iterations, status=status,
                         params={'psm_db': float(scenario['psm_db']), 'theta': alloc.theta})

    def _solve_joint(self, settings: SolverSettings, scenario: Dict[str, Any], seed: int) -> ResultRow:
        interference = None
        if scenario.get('p_IS_db') is not None:
            interference = channel_service.interference_scenario(
                10.0 ** (float(scenario['p_IS_db']) / 10.0), float(scenario['D0_m']),
                list(scenario['distances']), float(scenario['exponent']))
        joint = joint_service.joint_scenario(scenario['distances'], float(scenario['rho0_db']),
                                             float(scenario['eta1']), float(scenario['alpha']),
                                             float(scenario['exponent']), interference)
        solution = joint_service.solve_joint(joint, settings.name, settings.T_step)
        return ResultRow(module='joint', solver=settings.name, N=joint.n_users, eta1=joint.eta1,
                         T_star=solution.T, rates=tuple(solution.downlink_rates), objective=solution.R,
                         jain=noma_service.jain_index(solution.downlink_rates),
                         iterations=solution.report.iterations, status=solution.report.status,
                         params={'alpha': joint.alpha, 'uplink_rate': solution.uplink_rate})

    # ------------------------------------------------------------------
    # bundled reproductions
    # ------------------------------------------------------------------
    def reproduce(self, name: str, trials: Optional[int] = None, seed: int = 0,
                  jobs: int = 1) -> List[ResultRow]:
        if name not in REPRODUCTIONS:
            raise ConfigError(f"unknown reproduction {name!r}; available: {', '.join(REPRODUCTIONS)}")
        if trials is not None and trials < 1:
            raise ConfigError("trials must be at least 1", key_path='trials')
        if name == 'example1':
            return self._example1()
        if name == 'example2':
            return self._example2()
        if name == 'singleuser-tradeoff':
            return [self._solve_harvest(SolverSettings(name='deterministic'), {'X': X}, seed)
                    for X in (10.0, 20.0)]
        if name == 'relay-baselines':
            return self._relay_baselines(trials or 10, seed, jobs)
        return self._stackelberg_prices(trials or 100, seed, jobs)

    def _example_rows(self, pathlosses: Sequence[float]):
        network = channel_service.scenario_from_pathloss(list(pathlosses))
        scenario = dict(SCENARIO_DEFAULTS['noma'], pathlosses=list(pathlosses))
        T = noma_service.optimal_T_sum(network)

        def row(solver: str, T_row: float, rates: np.ndarray, objective: float, **params) -> ResultRow:
            ee = tdma_service.energy_efficiency(float(np.sum(rates)), network.P0_watts, T_row)
            out = self._network_row('noma', solver, scenario, network, T_row, rates, objective, ee)
            out.params = params
            return out

        descending = noma_service.descending_order(network)
        down = noma_service.rate_fixed_order(network, T, descending)
        rows = [row('optimal_T', T, down, noma_service.system_throughput(network, T)),
                row('order_descending', T, down, float(down.min()))]
        return network, row, rows

    def _example1(self) -> List[ResultRow]:
        network, row, rows = self._example_rows(EXAMPLE1_PATHLOSSES)
        T = rows[0].T_star
        ascending = noma_service.descending_order(network).order[::-1]
        up = noma_service.rate_fixed_order(network, T, DecodingPermutation(ascending))
        rows.append(row('order_ascending', T, up, float(up.min())))
        ts, R_min = noma_service.solve_minrate_ts_lp(network, T, noma_service.all_permutations(network.n_users))
        rows.append(row('scheme_b', T, noma_service.rate_ts(network, T, ts), R_min,
                        **{f'tau_{k + 1}': v for k, v in enumerate(ts.tau)}))
        for scheme in ('c', 'd'):
            result = noma_service.solve_scheme(network, scheme)
            rows.append(row(f'scheme_{scheme}', result.T, result.rates, result.objective))
        return rows

    def _example2(self) -> List[ResultRow]:
        network, row, rows = self._example_rows(EXAMPLE2_PATHLOSSES)
        _, point = noma_service.max_min_point(network, 0.46)
        rows.append(row('max_min_point', 0.46, point, float(point.min())))
        for scheme in ('c', 'd'):
            result = noma_service.solve_scheme(network, scheme)
            rows.append(row(f'scheme_{scheme}', result.T, result.rates, result.objective))
        return rows

    def _relay_baselines(self, trials: int, seed: int, jobs: int) -> List[ResultRow]:
        def work(task: Tuple[float, int]) -> Tuple[float, float, float]:
            psm_db, k = task
            link = relay_service.relay_geometry(RELAY_EXPONENTS, psm_db, seed + k)
            _, proposed, _ = relay_service.solve_iterative(link, 1)
            _, equal = relay_service.equal_split_baseline(link)
            _, best = relay_service.best_channel_baseline(link)
            return proposed, equal, best

        tasks = [(psm_db, k) for psm_db in RELAY_PSM_DB for k in range(trials)]
        results = np.array(self._map(work, tasks, jobs)).reshape(len(RELAY_PSM_DB), trials, 3)
        rows = []
        for psm_db, block in zip(RELAY_PSM_DB, results):
            for j, scheme in enumerate(('proposed', 'equal_split', 'best_channel')):
                rows.append(ResultRow(module='relay', solver=scheme, seed=seed, N=len(RELAY_EXPONENTS),
                                      objective=float(block[:, j].mean()),
                                      params={'psm_db': psm_db, 'trials': trials}))
        return rows

    def _stackelberg_prices(self, trials: int, seed: int, jobs: int) -> List[ResultRow]:
        settings = SolverSettings(name='optimal_prices', max_iterations=200)
        scenario = dict(SCENARIO_DEFAULTS['stackelberg'])
        return self._map(lambda k: self.solve_one('stackelberg', settings, scenario, seed + k, {'trial': k}),
                         list(range(trials)), jobs)

    # ------------------------------------------------------------------
    # output
    # ------------------------------------------------------------------
    def write_csv(self, rows: Sequence[ResultRow], stream: TextIO) -> None:
        header = csv_header(rows)
        writer = csv.writer(stream)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row.to_csv_fields(header))

    def to_csv(self, rows: Sequence[ResultRow]) -> str:
        buffer = io.StringIO()
        self.write_csv(rows, buffer)
        return buffer.getvalue()

    def all_failed(self, rows: Sequence[ResultRow]) -> bool:
        return bool(rows) and all(row.status == 'failed' for row in rows)

    def mean_price(self, rows: Sequence[ResultRow]) -> Optional[Prices]:
        """Average leader prices over the successful rows of a price study."""
        ok = [row for row in rows if row.status != 'failed' and 'c1' in row.params]
        if not ok:
            return None
        return Prices(float(np.mean([r.params['c1'] for r in ok])), float(np.mean([r.params['c2'] for r in ok])))


# Global instance
experiment_service = ExperimentService()
