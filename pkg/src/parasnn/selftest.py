"""Built-in invariant battery: quick, seeded checks of the core guarantees.

Each check returns (name, ok, detail). run() executes all of them, prints one
line per check, and returns a process exit code. The pytest suite covers the
same ground more exhaustively; this battery is for installed-package smoke
verification via the CLI.
"""

from __future__ import annotations

import numpy as np

from .convert import QCFS_EQ_CASE, QCFS_NEQ_CASE, convert, init_da_params, momentum_update
from . import neuron as nr
from . import numeric as nc
from .activations import da_qcfs, qcfs
from .runtime import ann_forward, off_boundary_mask, snn_parallel_forward
from .synth import make_synth_mlp, synth_dataset


def _check_numeric_kernels(rng):
    ok = True
    details = []
    y = nc.linear(np.array([[1.0, 1.0]]), np.array([[2.0, 3.0]]), np.array([1.0]))
    if not np.allclose(y, [[6.0]]):
        ok, details = False, details + [f"linear gave {y}"]
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    k = np.array([[[[1.0, 0.0], [0.0, 1.0]]]])
    y = nc.conv2d(x, k, np.zeros(1))
    if not np.allclose(y, [[[[5.0]]]]):
        ok, details = False, details + [f"conv2d gave {y}"]
    y = nc.avgpool2d(np.array([[[[0.0, 2.0], [4.0, 2.0]]]]), 2)
    if not np.allclose(y, [[[[2.0]]]]):
        ok, details = False, details + [f"avgpool2d gave {y}"]
    return "numeric kernels", ok, "; ".join(details) or "hand examples match"


def _check_staircase(rng):
    v1 = qcfs(np.array(0.425, dtype=np.float32), 1.0, 4, 0.5)
    v2 = da_qcfs(np.array(0.425, dtype=np.float32), 1.0, 4, 0.5, 0.05, 0.1)
    ok = np.isclose(float(v1), 0.5) and np.isclose(float(v2), 0.55)
    a = rng.uniform(-1, 2, size=4096).astype(np.float32)
    q = qcfs(a, 1.0, 8, 0.5)
    levels = np.round(np.asarray(q, dtype=np.float64) * 8)
    member = np.allclose(q, levels / 8, atol=0) and levels.min() >= 0 and levels.max() <= 8
    ok = ok and member
    return "staircase activations", bool(ok), f"point values {float(v1)}, {float(v2)}; level membership {member}"


def _check_conversion_math(rng):
    c = nr.conversion_coefficients(4)
    m = nr.conversion_matrix(3)
    b = nr.shift_vector(1.0, 0.0, 4)
    ok = (
        np.allclose(c, [1, 2 / 3, 2 / 3, 1])
        and np.allclose(m, [[1 / 3] * 3, [1 / 2] * 3, [1.0] * 3])
        and np.allclose(b, [0.125, 1 / 6, 0.25, 0.5])
    )
    return "conversion constants", bool(ok), f"c={np.round(c, 4)}, b={np.round(b, 4)}"


def _check_serial_oracle(rng):
    cur = np.full((4, 1), 0.55)
    train = nr.serial_if_run(cur, 1.0, 1.0, 0.5)
    ok = train.bits[:, 0].tolist() == [1, 0, 1, 0]
    return "serial integrate-and-fire", bool(ok), f"spikes {train.bits[:, 0].tolist()}"


def _check_fire_paths(rng):
    p = nr.ParallelNeuronParams(4, nr.shift_vector(1.0, 0.0, 4), 1.0, 1.0)
    cur = np.full((4, 1), 0.425)
    train = nr.fire_scan(cur, p)
    ok = train.bits[:, 0].tolist() == [0, 0, 1, 1]
    details = [f"example train {train.bits[:, 0].tolist()}"]
    mism = 0
    for steps in (1, 2, 3, 5, 8, 16):
        units = 400
        theta = rng.uniform(0.5, 2.0, size=units).astype(np.float32)
        psi = rng.uniform(0.01, 2.0, size=units).astype(np.float32)
        b = nr.shift_vector(2 * psi, 0.0, steps)  # [T, units] canonical columns
        params = nr.ParallelNeuronParams(steps, b, theta, theta)
        cur = rng.normal(0, 1.5, size=(steps, units))
        full = nr.fire_scan(cur, params)
        _, fast = nr.fire_bisect(nr.total_current(cur), params)
        mism += int((full.bits != fast.bits).sum())
        mism += 0 if full.is_monotone() else 1
    ok = ok and mism == 0
    details.append(f"fuzz mismatches {mism}")
    return "parallel firing paths", bool(ok), "; ".join(details)


def _check_momentum(rng):
    p = 0.0
    for _ in range(100):
        p = momentum_update(p, 0.1, 0.99)
    want = 0.1 * (1 - 0.99 ** 100)
    ok = abs(p - want) <= 1e-9 * abs(want)
    return "momentum recurrence", bool(ok), f"after 100 updates {p:.9f} vs {want:.9f}"


def _check_shape_regimes(rng):
    g = make_synth_mlp(seed=11, depth=3, width=6, in_dim=5, classes=4, levels=4)
    eq = convert(init_da_params(g, 4, per_channel=False), 4, QCFS_EQ_CASE)
    neq = convert(init_da_params(g, 6, per_channel=True), 6, QCFS_NEQ_CASE)
    ok = True
    for layer in eq.spiking_layers():
        ok = ok and layer.params.shift.ndim == 1
    for layer in neq.spiking_layers():
        ok = ok and layer.params.shift.ndim == 2
    return "conversion shape regimes", bool(ok), "scalar and per-channel parameter layouts hold"


def _check_lossless_equality(rng):
    g = make_synth_mlp(seed=23, depth=4, width=24, in_dim=12, classes=6, levels=4)
    net = convert(init_da_params(g, 4, per_channel=False), 4, QCFS_EQ_CASE)
    data = synth_dataset(seed=24, dims=(12,), classes=6, n=128).x
    keep = off_boundary_mask(g, data)
    ann = ann_forward(g, data)
    snn = snn_parallel_forward(net, data).logits
    ok = keep.sum() >= 100 and np.array_equal(ann[keep], snn[keep])
    return (
        "matched-steps losslessness",
        bool(ok),
        f"{int(keep.sum())}/128 off-boundary samples, logits identical: "
        f"{bool(np.array_equal(ann[keep], snn[keep]))}",
    )


def _check_permutation_invariance(rng):
    steps, units = 8, 300
    theta = rng.uniform(0.5, 2.0, size=units).astype(np.float32)
    b = nr.shift_vector(theta, 0.0, steps)
    params = nr.ParallelNeuronParams(steps, b, theta, theta)
    grid = 2.0 ** -10
    base = rng.integers(-2000, 2000, size=(steps, units)).astype(np.float64) * grid
    ref = nr.fire_scan(base, params)
    perm = base[rng.permutation(steps)]
    out = nr.fire_scan(perm, params)
    ok = np.array_equal(ref.bits, out.bits)
    return "temporal redistribution invariance", bool(ok), "permuted currents give identical trains"


CHECKS = (
    _check_numeric_kernels,
    _check_staircase,
    _check_conversion_math,
    _check_serial_oracle,
    _check_fire_paths,
    _check_momentum,
    _check_shape_regimes,
    _check_lossless_equality,
    _check_permutation_invariance,
)


def run(seed: int, out=print) -> int:
    """Execute every check with a seeded generator; return a process exit code."""
    rng = np.random.default_rng(seed)
    failures = 0
    for check in CHECKS:
        try:
            name, ok, detail = check(rng)
        except Exception as exc:  # a crashed check is a failed check
            name, ok, detail = check.__name__, False, f"raised {type(exc).__name__}: {exc}"
        failures += 0 if ok else 1
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    out(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return 0 if failures == 0 else 1
