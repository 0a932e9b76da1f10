import csv
import os
from typing import Any, Dict, Iterable, List, Sequence

from ...domain.entities.bench import SampleResult

RESULT_COLUMNS = ("sample_id",) + SampleResult.METRICS + ("sweep_max_fraction", "error")


class CSVFormatter:
    @staticmethod
    def save_rows(rows: Sequence[Dict[str, Any]], filepath: str, columns: Iterable[str] = ()) -> int:
        if not rows:
            return 0
        fieldnames: List[str] = list(columns) or list(rows[0].keys())
        directory = os.path.dirname(filepath)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(filepath, mode="w", newline="") as file:
            writer = csv.DictWriter(file, fieldnames=fieldnames, extrasaction="ignore")
            writer.writeheader()
            writer.writerows(rows)
        return len(rows)

    @staticmethod
    def save_results(results: Sequence[SampleResult], filepath: str) -> int:
        """One row per bench sample; booleans written as 0/1."""
        rows = []
        for r in results:
            row = {"sample_id": r.sample_id, "sweep_max_fraction": f"{r.sweep_max_fraction:.6f}", "error": r.error or ""}
            row.update({m: int(bool(getattr(r, m))) for m in SampleResult.METRICS})
            rows.append(row)
        return CSVFormatter.save_rows(rows, filepath, RESULT_COLUMNS)
