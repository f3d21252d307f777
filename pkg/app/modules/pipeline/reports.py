"""
Evaluation Reports
EvalReport, JSON-lines serialisation and the human-readable tables
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from app.errors import ArtifactError
from app.utils.storage import atomic_write_text

logger = logging.getLogger(__name__)

REPORT_SUFFIX = '.jsonl'


@dataclass
class RobustnessRow:
    """Mean accuracy over seeds for one (kind, n) perturbation"""
    kind: str
    n: int
    accuracy: float
    global_accuracy: float
    seeds: int = 1


@dataclass
class EvalReport:
    overall: float
    # classes without test samples are left out of per_class and relative
    per_class: Dict[str, float]
    fingerprint: str
    n_test: int
    global_overall: Optional[float] = None
    rows: List[RobustnessRow] = field(default_factory=list)
    ablation: Dict[str, float] = field(default_factory=dict)
    relative: Dict[str, float] = field(default_factory=dict)
    confusion: List[List[int]] = field(default_factory=list)
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec='seconds'))

    def to_records(self) -> List[dict]:
        """One JSON object per line: a summary, then one record per robustness row"""
        summary = {k: v for k, v in asdict(self).items() if k != 'rows'}
        records = [{'type': 'summary', **summary}]
        records.extend({'type': 'robustness', 'fingerprint': self.fingerprint, **asdict(r)} for r in self.rows)
        return records

    @classmethod
    def from_records(cls, records: List[dict]) -> 'EvalReport':
        summaries = [r for r in records if r.get('type') == 'summary']
        if len(summaries) != 1:
            raise ArtifactError(f"Report needs exactly one summary record, found {len(summaries)}")
        summary = {k: v for k, v in summaries[0].items() if k != 'type'}
        rows = [
            RobustnessRow(**{k: v for k, v in r.items() if k not in ('type', 'fingerprint')})
            for r in records if r.get('type') == 'robustness'
        ]
        return cls(rows=rows, **summary)

    def comparable(self) -> dict:
        """Content without the timestamp, for determinism checks"""
        data = asdict(self)
        data.pop('created_at')
        return data


def write_report_jsonl(report: EvalReport, path):
    text = ''.join(json.dumps(r, sort_keys=True) + '\n' for r in report.to_records())
    atomic_write_text(path, text)
    logger.info(f"Wrote report {path}")


def read_report_jsonl(path) -> EvalReport:
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"Report not found: {path}")
    try:
        records = [json.loads(line) for line in path.read_text(encoding='utf-8').splitlines() if line.strip()]
    except json.JSONDecodeError as e:
        raise ArtifactError(f"{path}: invalid JSON line: {e}") from e
    return EvalReport.from_records(records)


def latest_report(report_dir) -> Optional[Path]:
    report_dir = Path(report_dir)
    if not report_dir.is_dir():
        return None
    reports = sorted(report_dir.glob(f'*{REPORT_SUFFIX}'), key=lambda p: (p.stat().st_mtime, p.name))
    return reports[-1] if reports else None


def robustness_frame(report: EvalReport) -> pd.DataFrame:
    """Rows per (kind, n) with the clean accuracies as reference"""
    frame = pd.DataFrame([asdict(r) for r in report.rows], columns=['kind', 'n', 'accuracy', 'global_accuracy', 'seeds'])
    if frame.empty:
        return frame
    frame['drop'] = report.overall - frame['accuracy']
    if report.global_overall is not None:
        frame['global_drop'] = report.global_overall - frame['global_accuracy']
    return frame


def per_class_frame(report: EvalReport) -> pd.DataFrame:
    frame = pd.DataFrame({'class': list(report.per_class), 'accuracy': list(report.per_class.values())})
    if report.relative:
        frame['relative_to_global'] = [report.relative.get(c) for c in report.per_class]
    return frame


def format_report_table(report: EvalReport) -> str:
    lines = [
        f"fingerprint {report.fingerprint}  test images {report.n_test}",
        f"overall accuracy {report.overall:.4f}"
        + (f"  (global-only {report.global_overall:.4f})" if report.global_overall is not None else ''),
    ]
    if report.ablation:
        lines.append('')
        lines.append(pd.DataFrame([report.ablation], index=['accuracy']).to_string(float_format='{:.4f}'.format))
    lines.append('')
    lines.append(per_class_frame(report).to_string(index=False, float_format='{:.4f}'.format))
    if report.rows:
        lines.append('')
        table = robustness_frame(report).pivot_table(
            index='kind', columns='n', values='accuracy', sort=False
        )
        table = table[sorted(table.columns, reverse=True)]
        table.columns = [f'W/{n}' for n in table.columns]
        lines.append(table.to_string(float_format='{:.4f}'.format))
        lines.append('')
        lines.append(robustness_frame(report).to_string(index=False, float_format='{:.4f}'.format))
    return '\n'.join(lines) + '\n'
