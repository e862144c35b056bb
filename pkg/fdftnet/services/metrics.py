"""ACC / AUROC and the ablation comparison table."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from ..errors import InvalidLabelError, LengthMismatchError, MetricError, SingleClassError
from ..models.schemas import EvalResult

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5
ABLATION_FOOTER = (
    "Desk-scale run on synthetic data: no claim is made about the sign or size of the deltas."
)


def _validate(scores: Sequence[float], labels: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.size != y.size:
        raise LengthMismatchError(f"{s.size} scores for {y.size} labels")
    if s.size == 0:
        raise MetricError("metrics need at least one sample")
    if not np.isin(y, (0, 1)).all():
        raise InvalidLabelError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def confusion(scores: Sequence[float], labels: Sequence[int], threshold: float = DEFAULT_THRESHOLD) -> Tuple[int, int, int, int]:
    """(tp, fp, tn, fn) with score >= threshold predicting fake (1)."""
    s, y = _validate(scores, labels)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    tn = int(np.sum(~pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    return tp, fp, tn, fn


def accuracy(scores: Sequence[float], labels: Sequence[int], threshold: float = DEFAULT_THRESHOLD) -> float:
    tp, fp, tn, fn = confusion(scores, labels, threshold)
    return (tp + tn) / (tp + fp + tn + fn)


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney estimate of P(positive outscores negative), ties credited 1/2."""
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUROC is undefined when only one class is present")
    ranks = rankdata(s, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate_scores(scores: Sequence[float], labels: Sequence[int], threshold: float = DEFAULT_THRESHOLD) -> EvalResult:
    tp, fp, tn, fn = confusion(scores, labels, threshold)
    n = tp + fp + tn + fn
    return EvalResult(
        accuracy=(tp + tn) / n,
        auroc=auroc(scores, labels),
        n_samples=n,
        threshold=threshold,
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


def format_metrics(accuracy_value: float, auroc_value: Optional[float]) -> str:
    """Percentages to two decimals; an undefined AUROC is spelled out."""
    auc = "undefined" if auroc_value is None else f"{100.0 * auroc_value:.2f}"
    return f"ACC (%): {100.0 * accuracy_value:.2f}  AUROC: {auc}"


def write_eval_result(result: EvalResult, path: Union[str, Path], **context: str) -> Path:
    """One-row CSV at full precision: context columns (checkpoint, role, ...) then the result fields."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([{**context, **result.model_dump()}])
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


@dataclass
class AblationReport:
    """Rows of (label, result); deltas are in percentage points against the reference row."""
    rows: List[Tuple[str, EvalResult]]
    reference: str
    footer: str = ABLATION_FOOTER
    notes: List[str] = field(default_factory=list)

    def _result(self, label: str) -> EvalResult:
        for name, result in self.rows:
            if name == label:
                return result
        raise KeyError(label)

    def delta(self, label: str) -> Tuple[float, float]:
        ref, res = self._result(self.reference), self._result(label)
        return 100.0 * (res.accuracy - ref.accuracy), 100.0 * (res.auroc - ref.auroc)

    def to_frame(self) -> pd.DataFrame:
        records = []
        for label, result in self.rows:
            d_acc, d_auc = self.delta(label)
            records.append({
                "model": label,
                "acc": 100.0 * result.accuracy,
                "auroc": 100.0 * result.auroc,
                "delta_acc": d_acc,
                "delta_auroc": d_auc,
                "n_samples": result.n_samples,
            })
        return pd.DataFrame.from_records(records)

    def to_text(self) -> str:
        frame = self.to_frame()
        width = max(len("Model"), *(len(label) for label, _ in self.rows))
        header = f"{'Model':<{width}}  {'ACC (%)':>8}  {'AUROC (%)':>9}  {'dACC':>7}  {'dAUROC':>7}"
        lines = [header, "-" * len(header)]
        for row in frame.itertuples(index=False):
            lines.append(
                f"{row.model:<{width}}  {row.acc:>8.2f}  {row.auroc:>9.2f}  "
                f"{row.delta_acc:>+7.2f}  {row.delta_auroc:>+7.2f}"
            )
        lines.append(f"n = {frame['n_samples'].iloc[0]} test images per row; deltas relative to {self.reference}")
        lines.extend(self.notes)
        lines.append(self.footer)
        return "\n".join(lines)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path


def ablation_compare(
    result_a: EvalResult,
    result_b: EvalResult,
    labels: Tuple[str, str] = ("DA-FDFtNet", "FDFtNet"),
    baseline: Optional[EvalResult] = None,
    baseline_label: str = "Backbone",
) -> AblationReport:
    """Side-by-side table of ``result_a`` and ``result_b`` (the reference)."""
    if result_a.n_samples != result_b.n_samples:
        raise LengthMismatchError(
            f"results come from different test sets ({result_a.n_samples} vs {result_b.n_samples} samples)"
        )
    if baseline is not None and baseline.n_samples != result_a.n_samples:
        raise LengthMismatchError(
            f"baseline was computed on {baseline.n_samples} samples, not {result_a.n_samples}"
        )
    rows = [(labels[1], result_b), (labels[0], result_a)]
    if baseline is not None:
        rows.insert(0, (baseline_label, baseline))
    return AblationReport(rows=rows, reference=labels[1])
