"""Compare the JIT kernels against the pure-numpy fallback.

Run as a script:

    python3 benchmarks/bench_kernels.py [--repeat N]

Both implementations live in encore._kernels regardless of which one the
package bound at import, so a single process can time the DTW fill and
the additive-synthesis kernel on each path. When numba is unavailable
(or ENCORE_NO_NUMBA is set) only the numpy numbers are reported.
"""

import argparse
import statistics
import time

import numpy as np

from encore._kernels import (
    NUMBA_ENABLED,
    _dtw_fill_numpy,
    _render_notes_numpy,
)

if NUMBA_ENABLED:
    from encore._kernels import dtw_fill as dtw_fill_jit
    from encore._kernels import render_notes as render_notes_jit


def _time(fn, repeat):
    # one untimed call first: numba compiles, numpy warms caches
    fn()
    samples = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def _dtw_case(n, m, repeat, rng):
    cost = rng.uniform(0.0, 2.0, size=(n, m))
    rows = [("dtw_fill", f"{n}x{m}", "numpy", _time(lambda: _dtw_fill_numpy(cost), repeat))]
    if NUMBA_ENABLED:
        rows.append(("dtw_fill", f"{n}x{m}", "numba", _time(lambda: dtw_fill_jit(cost), repeat)))
        assert np.array_equal(_dtw_fill_numpy(cost), dtw_fill_jit(cost)), "paths diverged"
    return rows


def _synth_case(n_notes, seconds, repeat, rng):
    sr = 44100
    starts = np.sort(rng.uniform(0.0, seconds - 1.0, size=n_notes))
    durs = rng.uniform(0.1, 0.9, size=n_notes)
    freqs = 440.0 * 2.0 ** ((rng.integers(40, 90, size=n_notes) - 69) / 12.0)
    amps = rng.uniform(0.1, 0.5, size=n_notes)
    total = int(np.ceil(seconds * sr))
    label = f"{n_notes} notes/{seconds:g}s"

    def run_numpy():
        out = np.zeros(total)
        _render_notes_numpy(starts, durs, freqs, amps, 4, 0.01, 0.05, sr, out)
        return out

    rows = [("render_notes", label, "numpy", _time(run_numpy, repeat))]
    if NUMBA_ENABLED:

        def run_jit():
            out = np.zeros(total)
            render_notes_jit(starts, durs, freqs, amps, 4, 0.01, 0.05, sr, out)
            return out

        rows.append(("render_notes", label, "numba", _time(run_jit, repeat)))
        assert np.allclose(run_numpy(), run_jit(), atol=1e-9), "paths diverged"
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5, help="timed runs per case")
    args = parser.parse_args()

    rng = np.random.default_rng(1234)
    rows = []
    for n, m in ((200, 200), (500, 500), (1000, 1000)):
        rows += _dtw_case(n, m, args.repeat, rng)
    for n_notes, seconds in ((50, 10.0), (200, 30.0)):
        rows += _synth_case(n_notes, seconds, args.repeat, rng)

    print(f"numba available: {NUMBA_ENABLED}  (repeat={args.repeat}, median shown)")
    print(f"{'kernel':<14} {'case':<16} {'path':<7} {'seconds':>10}")
    by_case = {}
    for kernel, case, path, seconds in rows:
        print(f"{kernel:<14} {case:<16} {path:<7} {seconds:>10.5f}")
        by_case.setdefault((kernel, case), {})[path] = seconds
    if NUMBA_ENABLED:
        print()
        for (kernel, case), paths in by_case.items():
            ratio = paths["numpy"] / paths["numba"]
            print(f"{kernel} {case}: numba is {ratio:.1f}x the numpy path")


if __name__ == "__main__":
    main()
