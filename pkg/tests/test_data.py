# pylint: disable=redefined-outer-name
"""Tests for file loading, sample / marginal validation and the run-config schema."""

import json

import numpy as np
import pandas as pd
import pytest

from data.loader import load_config, load_marginal_csv, load_sample_csv, write_csv, write_json
from data.validator import ensure_valid, validate_config, validate_marginal, validate_sample
from utils.errors import (
    ConfigError, DegenerateData, EmptyData, MalformedInput, NonMonotoneMarginal, RankFailure,
    TooFewObservations,
)


def write_text(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding='utf-8')
    return str(path)


class TestLoadSample:

    def test_round_trip_of_a_simulated_sample(self, sample_csv, simulated):
        df = load_sample_csv(str(sample_csv))
        assert list(df.columns) == ['y', 'x', 'z']
        np.testing.assert_allclose(df['x'], simulated.x)
        assert set(df['z']) == {'0', '1'}

    def test_column_aliases_and_whitespace(self, tmp_path):
        path = write_text(tmp_path, 's.csv', "Outcome, Covariate, Instrument\n1.0, 0.5, a\n2.0, 0.7, b\n")
        df = load_sample_csv(path)
        assert df['y'].tolist() == [1.0, 2.0]
        assert df['z'].tolist() == ['a', 'b']

    def test_truth_columns_are_kept(self, tmp_path):
        path = write_text(tmp_path, 's.csv', "y,x,z,xstar\n1,2,0,1.9\n")
        assert load_sample_csv(path)['xstar'].tolist() == [1.9]

    def test_bad_cell_reports_row_and_column(self, tmp_path):
        path = write_text(tmp_path, 's.csv', "y,x,z\n1,2,0\n1,oops,1\n")
        with pytest.raises(MalformedInput) as info:
            load_sample_csv(path)
        assert info.value.row == 3
        assert info.value.column == 'x'
        assert "'oops'" in str(info.value)

    def test_nonfinite_values(self, tmp_path):
        path = write_text(tmp_path, 's.csv', "y,x,z\ninf,2,0\n")
        with pytest.raises(MalformedInput):
            load_sample_csv(path)

    def test_missing_column(self, tmp_path):
        path = write_text(tmp_path, 's.csv', "y,x\n1,2\n")
        with pytest.raises(MalformedInput, match="column 'z'"):
            load_sample_csv(path)

    def test_empty_label(self, tmp_path):
        path = write_text(tmp_path, 's.csv', "y,x,z\n1,2,0\n1,2,\n")
        with pytest.raises(MalformedInput) as info:
            load_sample_csv(path)
        assert info.value.row == 3

    def test_missing_and_empty_files(self, tmp_path):
        with pytest.raises(MalformedInput, match="not found"):
            load_sample_csv(str(tmp_path / 'absent.csv'))
        with pytest.raises(EmptyData):
            load_sample_csv(write_text(tmp_path, 'e.csv', ""))
        with pytest.raises(EmptyData):
            load_sample_csv(write_text(tmp_path, 'h.csv', "y,x,z\n"))


class TestValidateSample:

    @pytest.fixture
    def frame(self):
        rng = np.random.default_rng(0)
        return pd.DataFrame({'y': rng.normal(size=300), 'x': rng.normal(size=300),
                             'z': np.where(np.arange(300) % 2, '1', '0')})

    def test_valid_sample(self, frame):
        result = validate_sample(frame)
        assert result['passed']
        assert result['instrument']['counts'] == {'0': 150, '1': 150}
        ensure_valid(result)

    def test_too_few_rows(self, frame):
        with pytest.raises(TooFewObservations):
            ensure_valid(validate_sample(frame.head(50)))

    def test_constant_covariate(self, frame):
        frame['x'] = 1.0
        with pytest.raises(DegenerateData):
            ensure_valid(validate_sample(frame))

    def test_single_instrument_value(self, frame):
        frame['z'] = '0'
        result = validate_sample(frame)
        assert result['error_types'] == [RankFailure]
        with pytest.raises(RankFailure):
            ensure_valid(result)

    def test_small_label_is_a_warning(self, frame):
        frame.loc[:4, 'z'] = '2'
        result = validate_sample(frame)
        assert result['passed']
        assert result['instrument']['small_labels'] == ['2']
        assert result['warnings']


class TestMarginal:

    @pytest.fixture
    def table(self):
        k = np.linspace(-3.0, 3.0, 120)
        return pd.DataFrame({'varkappa': k, 'cdf': (k + 3.0) / 6.02 + 0.001})

    def test_load_and_validate(self, tmp_path, table):
        path = tmp_path / 'm.csv'
        table.rename(columns={'varkappa': 'kappa'}).to_csv(path, index=False)
        loaded = load_marginal_csv(str(path))
        np.testing.assert_allclose(loaded['cdf'], table['cdf'])
        assert validate_marginal(loaded)['passed']

    def test_not_increasing(self, table):
        table.loc[10, 'cdf'] = table.loc[9, 'cdf']
        result = validate_marginal(table)
        assert not result['passed']
        assert 'row 12' in result['errors'][0]
        with pytest.raises(NonMonotoneMarginal):
            ensure_valid(result)

    def test_too_short(self, table):
        with pytest.raises(TooFewObservations):
            ensure_valid(validate_marginal(table.head(20)))

    def test_values_outside_unit_interval(self, table):
        table['cdf'] += 0.5
        with pytest.raises(NonMonotoneMarginal, match=r"\[0, 1\]"):
            ensure_valid(validate_marginal(table))


class TestConfig:

    def test_absent_path_is_empty(self):
        assert load_config(None) == {}

    def test_invalid_json_reports_position(self, tmp_path):
        path = write_text(tmp_path, 'c.json', '{\n  "grid_size": 51,\n}\n')
        with pytest.raises(MalformedInput) as info:
            load_config(path)
        assert info.value.row == 3

    def test_valid_fit_config(self):
        config = {'kernel': 'gaussian', 'degree': 3, 'grid_range': [-1.0, 2.0], 'anchor_x': None,
                  'z_pair': ['0', '1']}
        assert validate_config(config, 'fit')['passed']

    def test_every_problem_is_reported(self):
        config = {'grid_size': 2, 'degree': 4, 'bandwith': 0.3}
        with pytest.raises(ConfigError) as info:
            ensure_valid(validate_config(config, 'fit'))
        assert len(info.value.problems) == 3
        assert "unknown key 'bandwith'" in info.value.problems

    @pytest.mark.parametrize("config", [
        {'grid_range': [2.0, -1.0]},
        {'z_pair': ['0', '0']},
        {'density_floor': 0.0},
        {'rank_threshold': True},
    ])
    def test_rejected_fit_values(self, config):
        assert not validate_config(config, 'fit')['passed']

    def test_sweep_schema(self):
        config = {'spec': 'gaussian_symmetric', 'mode': 'mc', 'ns': [1000, 4000], 'reps': 2,
                  'tau_rule': {'multiplier': 0.8, 'exponent': -0.0833},
                  'quadrature': {'rule': 'adaptive', 'abs_tol': 1e-12}}
        assert validate_config(config, 'sweep')['passed']
        assert not validate_config({'spec': 'no_such_spec'}, 'sweep')['passed']
        assert not validate_config({'reps': 1}, 'sweep')['passed']
        assert not validate_config({'taus': [0.1, -0.2]}, 'sweep')['passed']

    def test_config_must_be_an_object(self):
        assert not validate_config([1, 2], 'fit')['passed']
        assert not validate_config({}, 'plot')['passed']


class TestWriters:

    def test_csv_uses_fixed_format(self, tmp_path):
        path = tmp_path / 'out.csv'
        write_csv(pd.DataFrame({'a': [1.0 / 3.0], 'b': ['x']}), str(path))
        assert path.read_text() == "a,b\n0.333333333333,x\n"

    def test_json_sorts_keys_and_nulls_nan(self, tmp_path):
        path = tmp_path / 'out.json'
        write_json({'b': np.float64(np.nan), 'a': np.int64(2), 'c': np.array([1.5])}, str(path))
        assert json.loads(path.read_text()) == {'a': 2, 'b': None, 'c': [1.5]}
        assert path.read_text().index('"a"') < path.read_text().index('"b"')
