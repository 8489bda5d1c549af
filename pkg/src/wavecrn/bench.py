"""SRU vs LSTM timing and parameter study.

Absolute milliseconds are machine-specific; the speed ratio between the two
cells and the log-log scaling exponent in the channel count are what the
study reports.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from wavecrn import recurrent

WARMUP = 3
MIN_REPS = 20
MIN_TICKS = 100


@dataclass
class BenchRow:
    cell: str
    pass_: str
    n: int
    t: int
    c: int
    median_ms: float
    min_ms: float
    params: int
    reps: int


@dataclass
class BenchResult:
    rows: list[BenchRow] = field(default_factory=list)
    exponents: dict[str, float] = field(default_factory=dict)
    threads: int = 1
    depth: int = 6

    def median(self, cell, pass_, c) -> float:
        for r in self.rows:
            if (r.cell, r.pass_, r.c) == (cell, pass_, c):
                return r.median_ms
        raise KeyError((cell, pass_, c))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell", "pass", "N", "T", "C", "median_ms", "min_ms", "params"])
            for r in self.rows:
                w.writerow([r.cell, r.pass_, r.n, r.t, r.c, f"{r.median_ms:.4f}", f"{r.min_ms:.4f}", r.params])

    def summary_markdown(self) -> str:
        lines = [
            f"# SRU vs LSTM benchmark (depth {self.depth}, bidirectional, {self.threads} thread)",
            "",
            "| C | pass | SRU median ms | LSTM median ms | speedup | SRU params | LSTM params |",
            "|---|---|---|---|---|---|---|",
        ]
        by_key = {(r.cell, r.pass_, r.c): r for r in self.rows}
        for c in sorted({r.c for r in self.rows}):
            for p in ("forward", "backward"):
                s, l = by_key.get(("sru", p, c)), by_key.get(("lstm", p, c))
                if s is None or l is None:
                    continue
                lines.append(
                    f"| {c} | {p} | {s.median_ms:.2f} | {l.median_ms:.2f} | "
                    f"{l.median_ms / s.median_ms:.1f}x | {s.params} | {l.params} |"
                )
        if self.exponents:
            lines += ["", "Scaling exponent of time in C (log-log least squares):", ""]
            lines += [f"- {k}: {v:.2f}" for k, v in self.exponents.items()]
        return "\n".join(lines) + "\n"


def time_call(fn, reps: int = MIN_REPS, warmup: int = WARMUP):
    """Median and min wall time (ms) of ``fn()`` over ``reps`` timed calls.

    Repetitions grow until the total spans at least ``MIN_TICKS`` clock ticks.
    """
    for _ in range(warmup):
        fn()
    tick = time.get_clock_info("perf_counter").resolution
    samples = []
    while True:
        for _ in range(reps - len(samples)):
            t0 = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t0)
        if sum(samples) >= MIN_TICKS * tick:
            break
        reps *= 2
    return 1e3 * statistics.median(samples), 1e3 * min(samples), len(samples)


def scaling_exponent(cs, times) -> float:
    """Slope of log(time) against log(C)."""
    slope, _ = np.polyfit(np.log(np.asarray(cs, float)), np.log(np.asarray(times, float)), 1)
    return float(slope)


def _stack_inputs(rng, cell, c, n, t, depth):
    layers = recurrent.init_stack(rng, cell, c, c, depth, dtype=np.float32)
    x = rng.standard_normal((n, t, c)).astype(np.float32)
    return layers, x


def bench(
    cells=("sru", "lstm"),
    channels=(64, 128, 256, 512),
    n: int = 16,
    t: int = 335,
    depth: int = 6,
    passes=("forward", "backward"),
    reps: int = MIN_REPS,
    threads: int = 1,
    seed: int = 0,
) -> BenchResult:
    """Time bidirectional stacks of each cell over the channel grid (hidden = C).

    Besides the stack timings, measures one direction of the recurrence on
    its own: the elementwise scan for SRU, the full cell for LSTM. Their
    log-log slopes in C are reported as ``exponents``.
    """
    rng = np.random.default_rng(seed)
    res = BenchResult(threads=threads, depth=depth)
    kernel_times = {cell: [] for cell in cells}
    with threadpool_limits(limits=threads):
        for cell in cells:
            for c in channels:
                layers, x = _stack_inputs(rng, cell, c, n, t, depth)
                params = recurrent.param_count(cell, c, c, depth, bidirectional=True)
                holder = {}

                def fwd():
                    holder["out"] = recurrent.birnn_forward(x, layers, cell)

                if "forward" in passes:
                    med, mn, k = time_call(fwd, reps)
                    res.rows.append(BenchRow(cell, "forward", n, t, c, med, mn, params, k))
                if "backward" in passes:
                    fwd()
                    out, cache = holder["out"]
                    g = rng.standard_normal(out.shape).astype(np.float32)
                    med, mn, k = time_call(lambda: recurrent.birnn_backward(g, cache), reps)
                    res.rows.append(BenchRow(cell, "backward", n, t, c, med, mn, params, k))
                kernel_times[cell].append(time_call(_recurrence_kernel(rng, cell, c, n, t), reps)[0])
    for cell in cells:
        label = "sru_scan" if cell == "sru" else "lstm_recurrence"
        if len(channels) > 1:
            res.exponents[label] = scaling_exponent(channels, kernel_times[cell])
    return res


def _recurrence_kernel(rng, cell, c, n, t):
    if cell == "sru":
        u = [rng.standard_normal((t, n, c)).astype(np.float32) for _ in range(4)]
        v = [rng.standard_normal(c).astype(np.float32) for _ in range(4)]
        c0 = np.zeros((n, c), np.float32)
        return lambda: recurrent.sru_scan(*u, *v, c0)
    p = recurrent.LstmParams.init(rng, c, c)
    x = rng.standard_normal((n, t, c)).astype(np.float32)
    return lambda: recurrent.lstm_forward(x, p)
