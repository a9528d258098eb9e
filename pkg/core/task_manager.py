import asyncio
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

from loguru import logger
from rich.console import Console

console = Console(stderr=True)


@dataclass
class Cell:
    """One independent experiment cell: a zero-argument callable plus labels."""
    name: str
    fn: Callable[[], Any]
    meta: Dict[str, Any] = field(default_factory=dict)


@dataclass
class CellResult:
    name: str
    status: str
    value: Any = None
    error: Optional[str] = None
    elapsed: float = 0.0
    meta: Dict[str, Any] = field(default_factory=dict)


async def run_cell_wrapper(cell: Cell, executor, timeout: Optional[float]) -> CellResult:
    """
    Executes a cell in the executor. A failing or overrunning cell becomes a
    status record instead of cancelling its siblings.

    The timeout counts from the moment a worker picks the cell up, so a cell
    queued behind an overrunning one keeps its full budget.
    """
    loop = asyncio.get_running_loop()
    started = asyncio.Event()

    def body():
        loop.call_soon_threadsafe(started.set)
        return cell.fn()

    future = loop.run_in_executor(executor, body)
    await started.wait()
    start = time.perf_counter()
    try:
        value = await asyncio.wait_for(future, timeout=timeout) if timeout else await future
        return CellResult(cell.name, "ok", value=value, elapsed=time.perf_counter() - start, meta=cell.meta)
    except asyncio.TimeoutError:
        logger.warning(f"cell '{cell.name}' exceeded {timeout:g}s, marked as timeout")
        return CellResult(cell.name, "timeout", error=f"timeout after {timeout:g}s",
                          elapsed=time.perf_counter() - start, meta=cell.meta)
    except Exception as e:
        logger.error(f"cell '{cell.name}' failed: {type(e).__name__}: {e}")
        return CellResult(cell.name, "error", error=f"{type(e).__name__}: {e}",
                          elapsed=time.perf_counter() - start, meta=cell.meta)


async def run_cells_async(cells: List[Cell], parallel: int = 1, timeout: Optional[float] = None,
                          description: str = "Running experiment cells...") -> List[CellResult]:
    console.print(f"[bold cyan]{description}[/bold cyan] ({len(cells)} cells, parallel={parallel})")
    executor = ThreadPoolExecutor(max_workers=max(1, parallel))
    try:
        if parallel <= 1:
            # submission order, one at a time
            results = []
            for cell in cells:
                result = await run_cell_wrapper(cell, executor, timeout)
                if result.status == "timeout":
                    # the overrunning thread keeps its worker until it returns
                    executor.shutdown(wait=False)
                    executor = ThreadPoolExecutor(max_workers=1)
                results.append(result)
        else:
            results = await asyncio.gather(*(run_cell_wrapper(cell, executor, timeout) for cell in cells))
    finally:
        executor.shutdown(wait=False)
    failed = sum(r.status != "ok" for r in results)
    colour = "green" if not failed else "yellow"
    console.print(f"[bold {colour}][+] {len(results) - failed}/{len(results)} cells completed.[/bold {colour}]")
    return list(results)


def run_cells(cells: List[Cell], parallel: int = 1, timeout: Optional[float] = None,
              description: str = "Running experiment cells...") -> List[CellResult]:
    """Synchronous entry point; results come back in submission order."""
    return asyncio.run(run_cells_async(cells, parallel, timeout, description))
