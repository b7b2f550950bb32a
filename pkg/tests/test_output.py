import io

import numpy as np
import pytest

from aiocollapse.core import BranchDistribution, CollapseMode
from aiocollapse.ensemble import RunConfig, TestReport, run_ensemble
from aiocollapse.error import DimensionError
from aiocollapse.output import (REPORT_HEADER, MomentTable, format_table,
                                read_moments_csv, report_rows,
                                write_csv, write_jsonl, write_moments_csv)


@pytest.fixture
def stats():
    return run_ensemble(RunConfig(
        initial=BranchDistribution([0.2, 0.3, 0.5]), spectrum=None,
        mode=CollapseMode.fixed(0.1), steps=5, trajectories=50))


def test_header():
    table = MomentTable(steps=np.arange(1), mean_p=np.zeros((1, 2)),
                        se_p=np.zeros((1, 2)), mean_x=np.zeros((1, 1)),
                        se_x=np.zeros((1, 1)))
    assert table.header() == ['step', 'mean_P0', 'se_P0', 'mean_P1',
                              'se_P1', 'cross_01', 'se_01']


def test_csv_written_and_read(stats):
    table = MomentTable.from_stats(stats)
    stream = io.StringIO()
    write_moments_csv(stream, table)
    text = stream.getvalue()
    assert text.splitlines()[0] == (
        'step,mean_P0,se_P0,mean_P1,se_P1,mean_P2,se_P2,'
        'cross_01,se_01,cross_02,se_02,cross_12,se_12')
    assert len(text.splitlines()) == 7
    parsed = read_moments_csv(io.StringIO(text))
    assert parsed.steps.tolist() == list(range(6))
    assert np.array_equal(parsed.mean_p, table.mean_p)
    assert np.array_equal(parsed.se_x, table.se_x)


def test_read_rejects_bad_files():
    with pytest.raises(DimensionError):
        read_moments_csv(io.StringIO(''))
    with pytest.raises(DimensionError):
        read_moments_csv(io.StringIO('step,mean_P0,se_P0,mean_P1\n'))
    with pytest.raises(DimensionError):
        read_moments_csv(io.StringIO(
            'step,mean_P0,se_P0,mean_P1,se_P1,cross_01,se_01\n0,1,2\n'))


@pytest.mark.parametrize('row', ['0,0.5,0.0,abc,0.0,0.25,0.0',
                                 'first,0.5,0.0,0.5,0.0,0.25,0.0'])
def test_read_rejects_non_numeric_cells(row):
    header = 'step,mean_P0,se_P0,mean_P1,se_P1,cross_01,se_01\n'
    with pytest.raises(DimensionError):
        read_moments_csv(io.StringIO(header + row + '\n'))


def test_write_jsonl():
    stream = io.StringIO()
    write_jsonl(stream, [{'a': 1}, {'b': float('inf')}])
    assert stream.getvalue() == '{"a": 1}\n{"b": "inf"}\n'


def test_write_csv():
    stream = io.StringIO()
    write_csv(stream, ['x', 'y'], [[1, 'a'], [2, 'b']])
    assert stream.getvalue() == 'x,y\n1,a\n2,b\n'


def test_format_table():
    reports = [TestReport('martingale', passed=True, max_abs_z=1.23456),
               TestReport('born_statistics', passed=False,
                          insufficient=True)]
    text = format_table(REPORT_HEADER, report_rows(reports))
    lines = text.splitlines()
    assert lines[0].split() == REPORT_HEADER
    assert lines[2].split() == ['martingale', 'PASS', '1.235', 'no']
    assert lines[3].split() == ['born_statistics', 'FAIL', '0', 'yes']
    assert len({len(line) for line in lines[:2]}) == 1
