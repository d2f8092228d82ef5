import copy
import json

import pytest

from conftest import LARGE_SCENARIO, SMALL_SCENARIO
from models.pv_model import ArrayTopology
from mppt_io.scenario import parse_scenario, read_scenario
from mppt_io.write_csv import TRACE_COLUMNS, read_table, records_frame, write_table, write_trace
from controller import StepRecord, current_noise_std
from util import ConfigError


def _document():
    with open(SMALL_SCENARIO) as fp:
        return json.load(fp)


def test_bundled_small_scenario():
    scenario = read_scenario(SMALL_SCENARIO)
    assert scenario.topology == ArrayTopology.small()
    assert scenario.profile.onsets == [5.75, 7.75]
    assert [c.controller_kind for c in scenario.controllers] == ['enhanced', 'enhanced', 'ic-baseline',
                                                                 'ann-ic-baseline', 'ann-ic-baseline']
    assert scenario.t_end == 10.0 and scenario.f_s == 20.0
    assert scenario.experiment.sigma_v == pytest.approx(1e-5 ** 0.5)
    enhanced = scenario.controllers[0]
    assert enhanced.smc.n_particles == 500 and enhanced.smc.max_step_v == 2.0
    assert enhanced.gllr.k_rebaseline == 20
    by_name = {c.name: c for c in scenario.controllers}
    assert by_name['ann_ic_irr'].restart_offset_v == 5.0
    assert by_name['ann_ic_vi'].restart_offset_v == 0.0
    assert by_name['enhanced_vi'].ann_mode == 'vi' and by_name['enhanced_vi'].m_probes == 4
    assert enhanced.settle_tol_v == 0.05 and enhanced.settle_steps == 2 and enhanced.settle_max_steps == 10


def test_bundled_large_scenario():
    scenario = read_scenario(LARGE_SCENARIO)
    assert scenario.topology == ArrayTopology.large()
    assert scenario.profile.onsets == [5.8, 7.8]


def test_topology_preset():
    document = _document()
    document['topology'] = 'small'
    assert parse_scenario(document).topology == ArrayTopology.small()


def test_missing_section():
    document = _document()
    del document['environment']
    with pytest.raises(ConfigError):
        parse_scenario(document)


def test_unknown_module_field():
    document = _document()
    document['module']['efficiency'] = 0.2
    with pytest.raises(ConfigError):
        parse_scenario(document)


def test_irradiance_count_must_match_the_topology():
    document = _document()
    for entry in document['environment']['schedule']:
        entry['irradiance_kw_m2'] = entry['irradiance_kw_m2'][:2]
    with pytest.raises(ConfigError):
        parse_scenario(document)


def test_horizon_must_cover_the_schedule():
    document = _document()
    document['experiment']['t_end_s'] = 7.0
    with pytest.raises(ConfigError):
        parse_scenario(document)


def test_controller_names_are_unique():
    document = _document()
    document['controllers'].append(copy.deepcopy(document['controllers'][0]))
    with pytest.raises(ConfigError):
        parse_scenario(document)


def test_non_numeric_field():
    document = _document()
    document['experiment']['f_s_hz'] = 'fast'
    with pytest.raises(ConfigError):
        parse_scenario(document)


def test_missing_scenario_file(tmp_path):
    with pytest.raises(ConfigError):
        read_scenario(str(tmp_path / 'absent.json'))


def test_fixed_thresholds_reach_the_controllers():
    document = _document()
    document['experiment'].update({'gllr_h': 42.0, 'h1_w': 3.0, 'sigma_nu_w': 0.5})
    scenario = parse_scenario(document)
    assert scenario.controllers[0].gllr.h == 42.0
    assert scenario.controllers[0].gllr.sigma_nu == 0.5
    assert scenario.controllers[3].h1 == 3.0


def test_trace_table_layout(tmp_path):
    records = [StepRecord(t=0.05 * k, v_command=100.0 + k, v_meas=100.0 + k, i_meas=40.0, p_meas=4000.0 + k,
                          g=0.0, alarm=k == 1, ann_triggered=False, v_hat=100.0, v_egmpp=100.0) for k in range(3)]
    path = write_trace(records, str(tmp_path / 'trace.csv'))
    frame = read_table(path)
    assert list(frame.columns) == TRACE_COLUMNS
    assert frame['alarm'].tolist() == [0, 1, 0]
    assert frame['v_cmd'].tolist() == [100.0, 101.0, 102.0]


def test_tables_are_byte_identical(tmp_path):
    rows = [{'a': 1.0 / 3.0, 'b': 2}, {'a': 2.0 / 3.0, 'b': 3}]
    write_table(rows, str(tmp_path / 'one.csv'))
    write_table(rows, str(tmp_path / 'two.csv'))
    assert (tmp_path / 'one.csv').read_bytes() == (tmp_path / 'two.csv').read_bytes()
    assert (tmp_path / 'one.csv').read_text().splitlines()[1] == '0.3333333333,2'
    assert records_frame([]).columns.tolist() == TRACE_COLUMNS


def test_settle_gate_is_configurable():
    document = _document()
    document['controllers'][0].update({'settle_tol_v': 0.5, 'settle_steps': 3, 'settle_max_steps': 6})
    enhanced = parse_scenario(document).controllers[0]
    assert (enhanced.settle_tol_v, enhanced.settle_steps, enhanced.settle_max_steps) == (0.5, 3, 6)
    document['controllers'][0]['settle_steps'] = 0
    with pytest.raises(ConfigError):
        parse_scenario(document)


def test_current_noise_follows_the_active_pattern():
    scenario = read_scenario(SMALL_SCENARIO)
    plant = scenario.build_plant()
    shaded = scenario.profile.schedule[2].conditions
    expected = current_noise_std(plant.sigma_v, scenario.topology, scenario.params, shaded)
    assert plant.current_noise_at(8.0) == pytest.approx(expected)
    assert plant.current_noise_at(8.0) != plant.current_noise_at(5.0)
