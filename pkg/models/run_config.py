# models/run_config.py
"""
Run configuration and result rows for the batch front-end.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

# scenario keys each module understands, with their defaults
SCENARIO_DEFAULTS: Dict[str, Dict[str, Any]] = {
    'harvest': {'X': 10.0, 'kappa': None, 'zeta': None, 'samples': 10000},
    'tdma': {'n_users': 2, 'pathlosses': None, 'P0_dbm': 30.0, 'N0W_dbm': -114.0,
             'eta1': 0.5, 'eta2': 0.38},
    'stackelberg': {'n_users': 5, 'snr_db': 30.0},
    'relay': {'exponents': [2.0, 3.0], 'psm_db': 20.0},
    'joint': {'distances': [5.0, 1.0], 'rho0_db': 40.0, 'eta1': 0.5, 'alpha': 0.5,
              'exponent': 2.0, 'p_IS_db': None, 'D0_m': 20.0},
}
# keys that may be swept although their default is unset
OPTIONAL_NUMERIC = ('kappa', 'zeta', 'p_IS_db')

SCENARIO_DEFAULTS['noma'] = dict(SCENARIO_DEFAULTS['tdma'])
SCENARIO_DEFAULTS['propfair'] = dict(SCENARIO_DEFAULTS['tdma'])

SOLVERS: Dict[str, Sequence[str]] = {
    'harvest': ('deterministic', 'stochastic'),
    'tdma': ('sum_throughput', 'common_throughput'),
    'noma': ('scheme_a', 'scheme_b', 'scheme_c', 'scheme_d'),
    'propfair': ('pf_tdma', 'pf_noma'),
    'stackelberg': ('optimal_prices',),
    'relay': ('iterative', 'grid'),
    'joint': ('noma', 'tdma'),
}


@dataclass
class SolverSettings:
    name: str
    tolerance: float = 1e-6
    max_iterations: int = 2000
    T_step: float = 0.01
    K: int = 100  # theta grid size for the relay solvers
    iterations: int = 1  # alternating rounds for the iterative relay solver


@dataclass
class SweepSettings:
    parameter: str
    start: float
    stop: float
    step: float

    def values(self) -> List[float]:
        count = int(np.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return [float(self.start + k * self.step) for k in range(count)]


@dataclass
class MonteCarloSettings:
    trials: int = 1
    seed: int = 0


@dataclass
class RunConfig:
    module: str
    scenario: Dict[str, Any]
    solver: SolverSettings
    sweep: Optional[SweepSettings] = None
    montecarlo: MonteCarloSettings = field(default_factory=MonteCarloSettings)
    output: Optional[str] = None

    def to_dict(self) -> Dict:
        return {
            'module': self.module,
            'scenario': dict(self.scenario),
            'solver': vars(self.solver).copy(),
            'sweep': None if self.sweep is None else vars(self.sweep).copy(),
            'montecarlo': vars(self.montecarlo).copy(),
            'output': self.output,
        }


LEADING_COLUMNS = ['module', 'solver', 'seed', 'N', 'P0_dbm', 'N0W_dbm', 'eta1', 'eta2', 'T_star']
TRAILING_COLUMNS = ['objective', 'jain', 'energy_eff', 'iterations', 'status']


def format_value(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), '.12g')
    return str(value)


@dataclass
class ResultRow:
    """One solve, flattened for CSV. `params` follow the fixed columns."""
    module: str
    solver: str
    seed: Optional[int] = None
    N: Optional[int] = None
    P0_dbm: Optional[float] = None
    N0W_dbm: Optional[float] = None
    eta1: Optional[float] = None
    eta2: Optional[float] = None
    T_star: Optional[float] = None
    rates: Sequence[float] = ()
    objective: Optional[float] = None
    jain: Optional[float] = None
    energy_eff: Optional[float] = None
    iterations: Optional[int] = None
    status: str = 'optimal'
    params: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def failed(cls, module: str, solver: str, seed: Optional[int] = None,
               params: Optional[Dict[str, Any]] = None) -> 'ResultRow':
        return cls(module=module, solver=solver, seed=seed, status='failed', params=dict(params or {}))

    def to_dict(self) -> Dict:
        row = {name: getattr(self, name) for name in LEADING_COLUMNS}
        row.update({f'rate_{k + 1}': float(r) for k, r in enumerate(self.rates)})
        row.update({name: getattr(self, name) for name in TRAILING_COLUMNS})
        row.update({key: value for key, value in self.params.items() if key not in row})
        return row

    def to_csv_fields(self, header: Sequence[str]) -> List[str]:
        row = self.to_dict()
        return [format_value(row.get(name)) for name in header]


def csv_header(rows: Sequence[ResultRow]) -> List[str]:
    """The fixed schema, then parameter columns in first-seen order."""
    params: List[str] = []
    for row in rows:
        params.extend(key for key in row.params if key not in params)
    n_rates = max((len(row.rates) for row in rows), default=0)
    fixed = LEADING_COLUMNS + [f'rate_{k + 1}' for k in range(n_rates)] + TRAILING_COLUMNS
    return fixed + [key for key in params if key not in fixed]
