"""Writers and readers for moment tables, records and plain-text reports."""
import csv
from typing import IO, Iterable, List, Sequence

import attr
import numpy as np

from .ensemble import branch_pairs
from .error import DimensionError
from .misc import json_encode


def _fmt(value: float) -> str:
    return repr(float(value))


@attr.s(frozen=True, slots=True, eq=False)
class MomentTable:
    """Per-step means and standard errors in the ensemble CSV layout.

    Built from ``EnsembleStats``, ``EventTreeMoments`` (zero errors) or
    parsed back from a CSV file.
    """

    steps: np.ndarray = attr.ib()
    mean_p: np.ndarray = attr.ib()
    se_p: np.ndarray = attr.ib()
    mean_x: np.ndarray = attr.ib()
    se_x: np.ndarray = attr.ib()

    @classmethod
    def from_stats(cls, stats) -> 'MomentTable':
        return cls(steps=np.asarray(stats.steps), mean_p=stats.mean_p,
                   se_p=stats.se_p, mean_x=stats.mean_x, se_x=stats.se_x)

    from_moments = from_stats

    @property
    def branches(self) -> int:
        return int(self.mean_p.shape[1])

    def header(self) -> List[str]:
        names = ['step']
        for i in range(self.branches):
            names += ['mean_P%d' % i, 'se_P%d' % i]
        for i, j in branch_pairs(self.branches):
            names += ['cross_%d%d' % (i, j), 'se_%d%d' % (i, j)]
        return names

    def rows(self) -> List[List[str]]:
        out = []
        for r, step in enumerate(self.steps):
            row = [str(int(step))]
            for i in range(self.branches):
                row += [_fmt(self.mean_p[r, i]), _fmt(self.se_p[r, i])]
            for n in range(self.mean_x.shape[1]):
                row += [_fmt(self.mean_x[r, n]), _fmt(self.se_x[r, n])]
            out.append(row)
        return out


def write_moments_csv(stream: IO[str], table: MomentTable) -> None:
    writer = csv.writer(stream, lineterminator='\n')
    writer.writerow(table.header())
    writer.writerows(table.rows())


def read_moments_csv(stream: IO[str]) -> MomentTable:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise DimensionError('empty moments file')
    m = sum(1 for name in header if name.startswith('mean_P'))
    width = 1 + 2 * m + 2 * len(branch_pairs(m))
    if m == 0 or header[0] != 'step' or len(header) != width:
        raise DimensionError('unexpected moments header %r' % (header,))
    body = [row for row in reader if row]
    for row in body:
        if len(row) != width:
            raise DimensionError('moments row has %d columns, expected %d'
                                 % (len(row), width))
    try:
        steps = np.array([int(row[0]) for row in body], dtype=int)
        values = np.array([[float(v) for v in row[1:]] for row in body],
                          dtype=float).reshape(len(body), width - 1)
    except ValueError as exc:
        raise DimensionError('moments file has a non-numeric cell: %s'
                             % exc) from exc
    diag = values[:, :2 * m]
    cross = values[:, 2 * m:]
    return MomentTable(steps=steps,
                       mean_p=diag[:, 0::2], se_p=diag[:, 1::2],
                       mean_x=cross[:, 0::2], se_x=cross[:, 1::2])


def write_jsonl(stream: IO[str], records: Iterable[dict]) -> None:
    for record in records:
        stream.write(json_encode(record))
        stream.write('\n')


def write_csv(stream: IO[str], header: Sequence[str],
              rows: Iterable[Sequence]) -> None:
    writer = csv.writer(stream, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)


def _cell(value) -> str:
    if isinstance(value, bool):
        return 'yes' if value else 'no'
    if isinstance(value, str):
        return value
    return '%.4g' % value


def format_table(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """Columns padded to their widest cell, numbers right-aligned."""
    cells = [[str(c) for c in header]]
    numeric = []
    for row in rows:
        cells.append([_cell(c) for c in row])
        numeric.append([not isinstance(c, (str, bool)) for c in row])
    widths = [max(len(row[n]) for row in cells) for n in range(len(header))]
    lines = ['  '.join(c.ljust(w) for c, w in zip(cells[0], widths))]
    lines.append('  '.join('-' * w for w in widths))
    for row, flags in zip(cells[1:], numeric):
        lines.append('  '.join(c.rjust(w) if num else c.ljust(w)
                               for c, w, num in zip(row, widths, flags)))
    return '\n'.join(line.rstrip() for line in lines)


SCENARIO_HEADER = ['name', 'computed', 'unit', 'reference', 'ratio', 'derived',
                   'derived_ratio', 'flagged', 'within_tolerance']


def scenario_rows(results) -> List[list]:
    rows = []
    for res in results:
        rec = res.to_record()
        rows.append([rec[name] if rec[name] is not None else ''
                     for name in SCENARIO_HEADER])
    return rows


def report_rows(reports) -> List[list]:
    return [[r.name, 'PASS' if r.passed else 'FAIL', r.max_abs_z,
             'yes' if r.insufficient else 'no'] for r in reports]


REPORT_HEADER = ['test', 'verdict', 'max_abs_z', 'insufficient']
