# tests/test_cli.py

import csv

import pytest
from click.testing import CliRunner

from main import create_cli
from services.errors import ConfigError
from services.experiment_service import experiment_service


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def write_config(tmp_path):
    def write(text, name='run.yaml'):
        path = tmp_path / name
        path.write_text(text, encoding='utf-8')
        return str(path)
    return write


def read_rows(path):
    with open(path, newline='', encoding='utf-8') as handle:
        return list(csv.DictReader(handle))


def by_solver(rows):
    return {row['solver']: row for row in rows}


class TestLoadConfig:

    def test_defaults_filled(self, write_config):
        config = experiment_service.load_config(write_config("module: tdma\n"))
        assert config.solver.name == 'sum_throughput'
        assert config.solver.tolerance == pytest.approx(1e-6)
        assert config.scenario['P0_dbm'] == pytest.approx(30.0)
        assert config.montecarlo.trials == 1
        assert config.sweep is None

    def test_unknown_top_level_key(self, write_config):
        with pytest.raises(ConfigError) as info:
            experiment_service.load_config(write_config("module: tdma\nfoo: 1\n"))
        assert info.value.key_path == 'foo'
        assert info.value.line == 2

    def test_unknown_scenario_key(self, write_config):
        with pytest.raises(ConfigError) as info:
            experiment_service.load_config(write_config("module: harvest\nscenario:\n  Y: 3\n"))
        assert info.value.key_path == 'scenario.Y'

    def test_sweep_needs_numeric_parameter(self, write_config):
        text = ("module: relay\n"
                "sweep:\n  parameter: exponents\n  start: 1\n  stop: 2\n  step: 1\n")
        with pytest.raises(ConfigError) as info:
            experiment_service.load_config(write_config(text))
        assert info.value.key_path == 'sweep.parameter'

    def test_unknown_solver(self, write_config):
        with pytest.raises(ConfigError) as info:
            experiment_service.load_config(write_config("module: noma\nsolver:\n  name: scheme_e\n"))
        assert info.value.key_path == 'solver.name'

    def test_trials_must_be_positive(self, write_config):
        with pytest.raises(ConfigError):
            experiment_service.load_config(write_config("module: tdma\nmontecarlo:\n  trials: 0\n"))

    def test_parse_error_reports_line(self, write_config):
        with pytest.raises(ConfigError) as info:
            experiment_service.load_config(write_config("module: tdma\nscenario: [1, 2\n"))
        assert info.value.line is not None

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            experiment_service.load_config(str(tmp_path / 'absent.yaml'))

    def test_sweep_values(self, write_config):
        text = "module: harvest\nsweep:\n  parameter: X\n  start: 10\n  stop: 20\n  step: 5\n"
        config = experiment_service.load_config(write_config(text))
        assert config.sweep.values() == pytest.approx([10.0, 15.0, 20.0])


class TestCommands:

    def test_solve(self, runner, write_config, tmp_path):
        out = str(tmp_path / 'out.csv')
        result = runner.invoke(create_cli(), ['solve', write_config("module: harvest\n"), '--out', out])
        assert result.exit_code == 0, result.output
        rows = read_rows(out)
        assert len(rows) == 1
        assert float(rows[0]['T_star']) == pytest.approx(0.4177, abs=5e-4)
        assert float(rows[0]['objective']) == pytest.approx(1.7649, abs=1e-4)
        assert rows[0]['status'] == 'optimal'

    def test_config_error_exits_2(self, runner, write_config):
        result = runner.invoke(create_cli(), ['solve', write_config("module: tdma\nfoo: 1\n")])
        assert result.exit_code == 2
        assert 'foo' in result.output

    def test_missing_stochastic_parameters_exit_2(self, runner, write_config):
        config = write_config("module: harvest\nsolver:\n  name: stochastic\n")
        assert runner.invoke(create_cli(), ['solve', config]).exit_code == 2

    def test_sweep_rows_in_order(self, runner, write_config, tmp_path):
        out = str(tmp_path / 'sweep.csv')
        text = "module: harvest\nsweep:\n  parameter: X\n  start: 10\n  stop: 20\n  step: 10\n"
        result = runner.invoke(create_cli(), ['sweep', write_config(text), '--out', out, '--jobs', '2'])
        assert result.exit_code == 0, result.output
        rows = read_rows(out)
        assert [float(r['value']) for r in rows] == [10.0, 20.0]
        assert float(rows[1]['T_star']) == pytest.approx(0.3645, abs=5e-4)

    def test_fixed_columns_come_first(self, runner, write_config, tmp_path):
        out = str(tmp_path / 'sweep.csv')
        text = "module: harvest\nsweep:\n  parameter: X\n  start: 10\n  stop: 20\n  step: 10\n"
        assert runner.invoke(create_cli(), ['sweep', write_config(text), '--out', out]).exit_code == 0
        with open(out, newline='', encoding='utf-8') as handle:
            header = next(csv.reader(handle))
        assert header[:9] == ['module', 'solver', 'seed', 'N', 'P0_dbm', 'N0W_dbm', 'eta1', 'eta2', 'T_star']
        assert header[9:15] == ['rate_1', 'objective', 'jain', 'energy_eff', 'iterations', 'status']
        assert header[15:] == ['sweep', 'value', 'X']

    def test_sweep_command_needs_section(self, runner, write_config):
        assert runner.invoke(create_cli(), ['sweep', write_config("module: harvest\n")]).exit_code == 2

    def test_montecarlo_seeds_and_jobs(self, runner, write_config, tmp_path):
        text = "module: tdma\nmontecarlo:\n  trials: 3\n  seed: 5\n"
        config = write_config(text)
        serial, threaded = str(tmp_path / 'serial.csv'), str(tmp_path / 'threaded.csv')
        assert runner.invoke(create_cli(), ['montecarlo', config, '--out', serial]).exit_code == 0
        assert runner.invoke(create_cli(), ['montecarlo', config, '--out', threaded, '--jobs', '3']).exit_code == 0
        rows = read_rows(serial)
        assert [int(r['seed']) for r in rows] == [5, 6, 7]
        assert [int(r['trial']) for r in rows] == [0, 1, 2]
        with open(serial, encoding='utf-8') as a, open(threaded, encoding='utf-8') as b:
            assert a.read() == b.read()

    def test_seed_override(self, runner, write_config, tmp_path):
        out = str(tmp_path / 'seeded.csv')
        config = write_config("module: tdma\nmontecarlo:\n  trials: 2\n")
        assert runner.invoke(create_cli(), ['montecarlo', config, '--seed', '40', '--out', out]).exit_code == 0
        assert [int(r['seed']) for r in read_rows(out)] == [40, 41]

    def test_bad_tolerance(self, runner, write_config):
        result = runner.invoke(create_cli(), ['solve', write_config("module: tdma\n"), '--tolerance', '-1'])
        assert result.exit_code == 2


class TestReproduce:

    def test_example1(self, runner, tmp_path):
        out = str(tmp_path / 'example1.csv')
        result = runner.invoke(create_cli(), ['reproduce', 'example1', '--out', out])
        assert result.exit_code == 0, result.output
        rows = by_solver(read_rows(out))
        assert float(rows['optimal_T']['T_star']) == pytest.approx(0.2042, abs=1e-3)
        down = rows['order_descending']
        assert float(down['rate_1']) == pytest.approx(0.92253, abs=1e-2)
        assert float(down['rate_2']) == pytest.approx(4.65538, abs=1e-2)
        assert float(rows['scheme_b']['objective']) == pytest.approx(2.7891, abs=1e-2)
        assert float(rows['scheme_d']['objective']) == pytest.approx(2.7891, abs=1e-2)

    def test_example2(self, runner, tmp_path):
        out = str(tmp_path / 'example2.csv')
        result = runner.invoke(create_cli(), ['reproduce', 'example2', '--out', out])
        assert result.exit_code == 0, result.output
        rows = by_solver(read_rows(out))
        assert float(rows['optimal_T']['T_star']) == pytest.approx(0.1105, abs=1e-3)
        assert float(rows['order_descending']['rate_1']) == pytest.approx(10.8823, abs=1e-2)
        assert float(rows['max_min_point']['rate_1']) == pytest.approx(7.1242, abs=1e-2)
        assert float(rows['max_min_point']['rate_2']) == pytest.approx(1.4223, abs=1e-2)
        assert float(rows['scheme_d']['objective']) == pytest.approx(1.4223, abs=1e-2)

    def test_deterministic(self, runner, tmp_path):
        first, second = str(tmp_path / 'a.csv'), str(tmp_path / 'b.csv')
        runner.invoke(create_cli(), ['reproduce', 'example1', '--out', first])
        runner.invoke(create_cli(), ['reproduce', 'example1', '--out', second])
        with open(first, encoding='utf-8') as a, open(second, encoding='utf-8') as b:
            assert a.read() == b.read()

    def test_singleuser_tradeoff(self, runner, tmp_path):
        out = str(tmp_path / 'single.csv')
        assert runner.invoke(create_cli(), ['reproduce', 'singleuser-tradeoff', '--out', out]).exit_code == 0
        rows = read_rows(out)
        assert [float(r['X']) for r in rows] == [10.0, 20.0]
        assert [float(r['T_star']) for r in rows] == pytest.approx([0.4177, 0.3645], abs=5e-4)

    def test_stackelberg_prices(self):
        rows = experiment_service.reproduce('stackelberg-prices', trials=2, seed=0)
        assert [row.params['trial'] for row in rows] == [0, 1]
        assert all(row.params['c1'] > 0 for row in rows if row.status != 'failed')

    def test_unknown_name(self, runner):
        result = runner.invoke(create_cli(), ['reproduce', 'example3'])
        assert result.exit_code == 2
        assert 'example1' in result.output
