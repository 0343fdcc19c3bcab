"""Study logs
==============

Loggers that bind to the events of a
:class:`~po_forge.simulate.study.MonteCarloStudy` and record its progress.

Every event produces one or more rows with the columns of
:data:`LOG_COLUMNS`; the rows of one event share their ``index``:

* ``on_study_start``: the number of replicates, observations and targets.
* ``on_replicate_start``: the seed of the replicate.
* ``on_replicate_end``: the estimate of every target and the number of
  finished replicates.
* ``on_study_end``: the bias and coverage of every target.
"""

import time
import csv
import logging
from os.path import exists
from typing import Dict, List, Tuple, Sequence

from po_forge.base import ModelError
from po_forge.estimate import task_seed

__all__ = ('LOG_COLUMNS', 'STUDY_EVENTS', 'StudyLogger', 'StudyCSVLogger',
           'StudyProgressLogger')

LOG_COLUMNS = (
    'index', 'timestamp', 'study', 'event', 'replicate', 'item', 'value')

STUDY_EVENTS = (
    'on_study_start', 'on_replicate_start', 'on_replicate_end',
    'on_study_end')

Row = Tuple[str, str, str]
"""``(replicate, item, value)`` of a row, the rest is filled in."""


def _number(value) -> str:
    return f'{value:.17g}'


class StudyLogger:
    """Binds to the events of studies and turns each event into rows.

    Subclasses implement :meth:`write_rows`.
    """

    studies: Dict[object, List[Tuple[str, int]]] = {}
    '''The bind uids of every logged study.
    '''

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        self.studies = {}
        self._count = 0

    def add_study(self, study) -> None:
        if study in self.studies:
            raise ModelError(f'{study!r} is already logged')
        self.studies[study] = [
            (event, study.fbind(event, self.log_event, event))
            for event in STUDY_EVENTS]

    def remove_study(self, study) -> None:
        for event, uid in self.studies.pop(study):
            study.unbind_uid(event, uid)

    def log_event(self, event: str, study, obj, *args) -> None:
        # kivy passes the dispatching study, then the dispatched
        # ``(obj, *args)``
        rows = getattr(self, '_' + event[3:])(study, *args)
        self.write_rows(
            [[str(self._count), _number(time.perf_counter()),
              study.name or '', event[3:], *row] for row in rows])
        self._count += 1

    def _study_start(self, study, *args) -> List[Row]:
        return [('', 'reps', str(study.reps)), ('', 'n', str(study.n)),
                ('', 'targets', ';'.join(t.name for t in study.targets))]

    def _replicate_start(self, study, index, *args) -> List[Row]:
        return [(str(index), 'seed', str(task_seed(study.seed, index)))]

    def _replicate_end(self, study, index, *args) -> List[Row]:
        record = study.last_record
        rows = [(str(index), t.name, _number(v))
                for t, v in zip(study.targets, record.estimates)]
        rows.append((str(index), 'completed', str(study.completed)))
        return rows

    def _study_end(self, study, *args) -> List[Row]:
        rows = []
        for target in study.summary.targets:
            rows.append(('', f'{target.name}.bias', _number(target.bias)))
            rows.append(
                ('', f'{target.name}.coverage', _number(target.coverage)))
        return rows

    def write_rows(self, rows: Sequence[List[str]]) -> None:
        raise NotImplementedError


class StudyCSVLogger(StudyLogger):
    """Writes the rows to a new csv file.
    """

    filename: str = ''

    _file_descriptor = None

    _csv_writer = None

    def __init__(self, filename: str, **kwargs):
        super().__init__(**kwargs)
        self.filename = filename

    def __enter__(self):
        self.open_file()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close_file()
        return False

    def open_file(self):
        if self._file_descriptor is not None:
            raise TypeError('File is already open')
        if exists(self.filename):
            raise ValueError(f'"{self.filename}" already exists')
        self._file_descriptor = open(
            self.filename, mode='w', newline='', encoding='utf-8')
        self._csv_writer = csv.writer(self._file_descriptor)
        self._csv_writer.writerow(LOG_COLUMNS)
        self._count = 0

    def close_file(self):
        if self._file_descriptor is None:
            return
        self._file_descriptor.close()
        self._file_descriptor = None
        self._csv_writer = None

    def write_rows(self, rows):
        if self._csv_writer is None:
            raise TypeError(f'"{self.filename}" is not open')
        self._csv_writer.writerows(rows)


class StudyProgressLogger(StudyLogger):
    """Sends the rows to the ``po_forge.data_logger`` logger, comma
    separated.
    """

    log_level: int = logging.INFO

    def __init__(self, log_level: int = logging.INFO, **kwargs):
        super().__init__(**kwargs)
        self.log_level = log_level

    def write_rows(self, rows):
        log = logging.getLogger(__name__).log
        for row in rows:
            log(self.log_level, ','.join(row))
