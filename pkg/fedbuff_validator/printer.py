"""
Utilities for formatted console output.
"""

import os
from typing import Any, Dict, List

from rich.box import SIMPLE
from rich.console import Console
from rich.table import Table

from fedbuff_validator.analysis import BoundReport, RateFit
from fedbuff_validator.result_model import TraceDiffResult
from fedbuff_validator.utils.helpers import format_duration_for_display

LINE_WIDTH = 80


def _console() -> Console:
    no_color = bool(os.environ.get("NO_COLOR")) or os.environ.get("TERM") == "dumb"
    return Console(no_color=no_color, highlight=False)


def _frame(console: Console, title: str) -> None:
    console.print(f"\n[bold]{'=' * LINE_WIDTH}[/bold]")
    console.print(f"[bold]{title}[/bold]")
    console.print(f"[bold]{'=' * LINE_WIDTH}[/bold]")


def _status_line(console: Console, ok: bool, ok_text: str, fail_text: str) -> None:
    console.print(f"\n[bold]{'=' * LINE_WIDTH}[/bold]")
    if ok:
        console.print(f"[green]Status: {ok_text}[/green]")
    else:
        console.print(f"[red]Status: {fail_text}[/red]")
    console.print(f"[bold]{'=' * LINE_WIDTH}[/bold]\n")


def print_run_summary(experiment: str, cells: List[Dict[str, Any]], elapsed: float) -> None:
    """Table of the cells of an experiment run, as listed in its manifest."""
    console = _console()
    _frame(console, f"RUN SUMMARY: {experiment}")

    table = Table(box=SIMPLE, show_header=True, header_style="bold")
    table.add_column("Cell", style="white")
    table.add_column("Status")
    table.add_column("Rows", justify="right")
    table.add_column("Uploads", justify="right")
    table.add_column("Max staleness", justify="right")
    table.add_column("Final grad norm^2", justify="right")

    for cell in cells:
        ok = cell["status"] == "ok"
        table.add_row(
            cell["name"],
            "[green]ok[/green]" if ok else "[red]aborted[/red]",
            str(cell.get("rows", 0)),
            str(cell.get("uploads", 0)),
            str(cell.get("max_staleness", "-")),
            f"{cell['final_grad_norm_sq']:.6g}" if cell.get("final_grad_norm_sq") is not None else "-",
        )
    console.print(table)

    aborted = sum(1 for c in cells if c["status"] != "ok")
    console.print(f"{len(cells)} cells in {format_duration_for_display(elapsed)}")
    _status_line(console, aborted == 0, "ALL CELLS COMPLETED", f"{aborted} CELL(S) ABORTED")


def print_bound_report(report: BoundReport) -> None:
    """Empirical average against the bound, term by term."""
    console = _console()
    _frame(console, "BOUND CHECK")

    table = Table(box=SIMPLE, show_header=True, header_style="bold")
    table.add_column("Quantity", style="white")
    table.add_column("Value", justify="right")
    table.add_row("Seeds", str(report.num_seeds))
    table.add_row("Horizon T", str(report.inputs.T))
    table.add_row("Empirical average", f"{report.empirical_lhs:.6g}")
    table.add_row(f"{report.stderr_multiplier:g} x standard error", f"{report.stderr_multiplier * report.standard_error:.6g}")
    table.add_row("Initial gap term", f"{report.terms[0]:.6g}")
    table.add_row("Noise and diversity term", f"{report.terms[1]:.6g}")
    table.add_row("Staleness term", f"{report.terms[2]:.6g}")
    table.add_row("[bold]Bound[/bold]", f"[bold]{report.bound_value:.6g}[/bold]")
    console.print(table)

    _status_line(console, report.satisfied, "BOUND SATISFIED", "BOUND VIOLATED")


def print_rate_fit(fit: RateFit, threshold: float) -> None:
    console = _console()
    _frame(console, "RATE FIT")

    table = Table(box=SIMPLE, show_header=True, header_style="bold")
    table.add_column("T", justify="right")
    table.add_column("Time-averaged grad norm^2", justify="right")
    for horizon, value in zip(fit.horizons, fit.values):
        table.add_row(str(horizon), f"{value:.6g}")
    console.print(table)
    console.print(f"slope = {fit.slope:.4f}, residual = {fit.residual:.3g}")

    _status_line(console, fit.slope <= threshold, f"SLOPE <= {threshold}", f"SLOPE > {threshold}")


def print_trace_diff(result: TraceDiffResult, path_a: str, path_b: str) -> None:
    console = _console()
    if result.equal:
        console.print(f"[green]Event logs are identical[/green] ({result.lines_compared} lines)")
        return
    console.print(f"[red]Event logs diverge at line {result.first_divergence}[/red]")
    console.print(f"  {path_a}: {result.line_a if result.line_a is not None else '<end of file>'}")
    console.print(f"  {path_b}: {result.line_b if result.line_b is not None else '<end of file>'}")
