import csv
import logging

import pytest

from po_forge.base import ModelError
from po_forge.data_logger import StudyCSVLogger, StudyProgressLogger, \
    LOG_COLUMNS
from po_forge.estimate import EstimatorSettings, task_seed
from po_forge.simulate import late3_dgp
from po_forge.simulate.study import MonteCarloStudy, functional_targets, \
    monte_carlo


@pytest.fixture
def settings():
    return EstimatorSettings(folds=2, penalty=0.01, bootstrap=0)


@pytest.fixture
def targets(settings):
    return functional_targets(late3_dgp(), ['p_complier'], settings)


def read_rows(filename):
    with open(filename, newline='', encoding='utf-8') as fh:
        return list(csv.reader(fh))


def test_study_csv_log(tmp_path, settings, targets):
    filename = str(tmp_path / 'log.csv')
    with StudyCSVLogger(filename) as logger:
        summary = monte_carlo(late3_dgp(), targets, reps=3, n=400,
                              settings=settings, seed=2, loggers=[logger])

    rows = read_rows(filename)
    assert tuple(rows[0]) == LOG_COLUMNS
    rows = rows[1:]
    # 3 start rows, a seed per replicate, an estimate and the count per
    # finished replicate, bias and coverage at the end
    assert len(rows) == 3 + 3 + 2 * 3 + 2
    assert all(row[2] == 'monte_carlo' for row in rows)

    events = [row[3] for row in rows]
    assert events[:3] == ['study_start'] * 3
    assert events[-2:] == ['study_end'] * 2
    assert rows[0][5:] == ['reps', '3']
    assert rows[2][5:] == ['targets', 'p_complier']

    seeds = {row[4]: row[6] for row in rows if row[3] == 'replicate_start'}
    assert seeds == {str(i): str(task_seed(2, i)) for i in range(3)}
    completed = [row[6] for row in rows if row[5] == 'completed']
    assert completed == ['1', '2', '3']
    estimates = [float(row[6]) for row in rows
                 if row[3] == 'replicate_end' and row[5] == 'p_complier']
    assert len(estimates) == 3
    assert all(0 < v < 1 for v in estimates)

    # rows of one event share the index
    end = [row for row in rows if row[3] == 'study_end']
    assert end[0][0] == end[1][0]
    assert float(end[0][6]) == pytest.approx(summary.targets[0].bias)
    assert end[1][5] == 'p_complier.coverage'

    with pytest.raises(ValueError):
        StudyCSVLogger(filename).open_file()


def test_remove_study(tmp_path, settings, targets):
    study = MonteCarloStudy(
        dgp=late3_dgp(), targets=targets, settings=settings, reps=2, n=300,
        name='study')
    logger = StudyCSVLogger(str(tmp_path / 'log.csv'))
    logger.add_study(study)
    with pytest.raises(ModelError):
        logger.add_study(study)

    logger.remove_study(study)
    assert not logger.studies
    with logger:
        study.dispatch('on_replicate_start', study, 0)
    assert len(read_rows(str(tmp_path / 'log.csv'))) == 1

    with pytest.raises(TypeError):
        logger.write_rows([['0']])


def test_progress_logger(caplog, settings, targets):
    with caplog.at_level(logging.INFO, logger='po_forge.data_logger'):
        monte_carlo(late3_dgp(), targets, reps=2, n=300, settings=settings,
                    loggers=[StudyProgressLogger()])
    messages = [r.getMessage() for r in caplog.records
                if r.name == 'po_forge.data_logger']
    assert len(messages) == 3 + 2 + 2 * 2 + 2
    assert messages[0].split(',')[2:] == [
        'monte_carlo', 'study_start', '', 'reps', '2']
    assert messages[-1].split(',')[3:6] == [
        'study_end', '', 'p_complier.coverage']
