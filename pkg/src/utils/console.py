#!/usr/bin/env python3
"""
Shared rich console and small output helpers.

The console writes to stderr so that stdout stays free for piping.
"""

from typing import Iterable, Optional, TypeVar

from rich.console import Console
from tqdm import tqdm

console = Console(stderr=True)

T = TypeVar("T")


def warn(message: str) -> None:
    """Print a warning line"""
    console.print(f"[yellow]⚠️  {message}[/yellow]")


def status(passed: bool, label: str, detail: str = "") -> None:
    """Print a check result line"""
    mark = "✅" if passed else "❌"
    colour = "green" if passed else "red"
    suffix = f" [dim]{detail}[/dim]" if detail else ""
    console.print(f"  {mark} [{colour}]{label}[/{colour}]{suffix}")


def progress(items: Iterable[T], desc: str, total: Optional[int] = None,
             verbose: bool = True) -> Iterable[T]:
    """Wrap an iterable in a tqdm bar (silent when not verbose)"""
    return tqdm(items, desc=desc, total=total, disable=not verbose, leave=False)
