from typing import Any, Dict, List, Sequence

from tabulate import tabulate

from ...domain.entities.bench import SampleResult


class TableFormatter:
    @staticmethod
    def format_table(rows: Sequence[Dict[str, Any]], floatfmt: str = ".2f") -> str:
        if not rows:
            return "No data available"
        return tabulate(list(rows), headers="keys", tablefmt="grid", floatfmt=floatfmt)

    @staticmethod
    def format_results(results: Sequence[SampleResult]) -> str:
        """Per-sample pass/fail grid with the worst sweep fraction."""
        rows: List[Dict[str, Any]] = []
        for r in results:
            row = {"Sample": r.sample_id}
            row.update({m: "✓" if getattr(r, m) else "✗" for m in SampleResult.METRICS})
            row["Sweep"] = r.sweep_max_fraction
            rows.append(row)
        return TableFormatter.format_table(rows, floatfmt=".3f")

    @staticmethod
    def format_counts(counts: Dict[str, int], key_header: str = "Reason", value_header: str = "Count") -> str:
        """Two-column table, most frequent first."""
        if not counts:
            return "No data available"
        rows = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return tabulate(rows, headers=[key_header, value_header], tablefmt="grid")
