"""Independent reference computations used by the tests.

Nothing here calls into the package's forward/backward or regression code;
parameters are unpacked from the documented flat layout by hand and
everything runs in plain Python floats.
"""

import json
import math
from pathlib import Path

import numpy as np


def unpack(values, dims):
    """Flat layout -> per layer list of neurons, each (weights list, bias)."""
    values = [float(v) for v in values]
    layers, pos = [], 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        neurons = []
        for _ in range(fan_out):
            neurons.append((values[pos:pos + fan_in], values[pos + fan_in]))
            pos += fan_in + 1
        layers.append(neurons)
    assert pos == len(values)
    return layers


def forward_probs(values, dims, x):
    h = [float(v) for v in x]
    layers = unpack(values, dims)
    for li, neurons in enumerate(layers):
        z = [sum(w * a for w, a in zip(ws, h)) + b for ws, b in neurons]
        h = z if li == len(layers) - 1 else [max(v, 0.0) for v in z]
    m = max(h)
    e = [math.exp(v - m) for v in h]
    s = sum(e)
    return [v / s for v in e]


def fst_snd(probs):
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    return order[0], order[1]


def ce(probs, k):
    return -math.log(max(probs[k], 1e-12))


def central_diff(fun, values, idx, h=1e-5):
    plus = np.array(values, dtype=float)
    minus = plus.copy()
    plus[idx] += h
    minus[idx] -= h
    return (fun(plus) - fun(minus)) / (2 * h)


def hand_ols(xs, ys):
    """Textbook normal-equation formulas; returns slope, intercept, r2."""
    n = len(xs)
    sx, sy = sum(xs), sum(ys)
    sxx = sum(x * x for x in xs)
    sxy = sum(x * y for x, y in zip(xs, ys))
    slope = (n * sxy - sx * sy) / (n * sxx - sx * sx)
    intercept = (sy - slope * sx) / n
    my = sy / n
    ss_tot = sum((y - my) ** 2 for y in ys)
    ss_res = sum((y - slope * x - intercept) ** 2 for x, y in zip(xs, ys))
    r2 = 1.0 if ss_tot == 0 else 1 - ss_res / ss_tot
    return slope, intercept, r2


def tukey_keep(xs, ys):
    """Mask of samples inside 1.5 IQR fences on both coordinates (numpy percentiles)."""
    keep = np.ones(len(xs), dtype=bool)
    for vals in (np.asarray(xs, float), np.asarray(ys, float)):
        q1, q3 = np.percentile(vals, [25, 75], method="linear")
        iqr = q3 - q1
        keep &= (vals >= q1 - 1.5 * iqr) & (vals <= q3 + 1.5 * iqr)
    return keep


def gradsum_bruteforce(values, dims, xs, labels, k):
    """GradSum by finite-difference-free per-sample analytic loop in pure Python.

    For each sample the logit sensitivity of the summand is onehot(k) - onehot(other)
    with other = fst (failed) or snd (succeeded); backpropagated by explicit loops.
    """
    layers = unpack(values, dims)
    grads = [[([0.0] * len(ws), 0.0) for ws, _ in neurons] for neurons in layers]
    for x, t in zip(xs, labels):
        if t != k:
            continue
        acts = [[float(v) for v in x]]
        h = acts[0]
        for li, neurons in enumerate(layers):
            z = [sum(w * a for w, a in zip(ws, h)) + b for ws, b in neurons]
            h = z if li == len(layers) - 1 else [max(v, 0.0) for v in z]
            if li < len(layers) - 1:
                acts.append(h)
        m = max(h)
        e = [math.exp(v - m) for v in h]
        s = sum(e)
        probs = [v / s for v in e]
        f, sn = fst_snd(probs)
        other = sn if f == k else f
        delta = [0.0] * len(probs)
        delta[k] += 1.0
        delta[other] -= 1.0
        for li in range(len(layers) - 1, -1, -1):
            a = acts[li]
            for ni, (ws, _b) in enumerate(layers[li]):
                gw, gb = grads[li][ni]
                grads[li][ni] = ([g + delta[ni] * av for g, av in zip(gw, a)], gb + delta[ni])
            if li > 0:
                prev = [0.0] * len(a)
                for ni, (ws, _b) in enumerate(layers[li]):
                    for j, w in enumerate(ws):
                        prev[j] += delta[ni] * w
                delta = [p if av > 0 else 0.0 for p, av in zip(prev, a)]
    flat = []
    for neurons in grads:
        for gw, gb in neurons:
            flat.extend(gw)
            flat.append(gb)
    return np.array(flat)


def read_ckpt(path):
    """Parse an EFCKPT01 file with struct-free numpy reads."""
    raw = Path(path).read_bytes()
    assert raw[:8] == b"EFCKPT01"
    header = np.frombuffer(raw, "<u4", 2, 8)
    n_dims = int(header[1])
    dims = [int(d) for d in np.frombuffer(raw, "<u4", n_dims, 16)]
    return dims, np.frombuffer(raw, "<f8", offset=16 + 4 * n_dims).copy()


def pipeline_oracle(run_dir, s, k):
    """Recompute the round-``s`` prediction for class ``k`` from raw run files.

    Returns dict with the backfilled samples, the kept-sample OLS and the
    predicted accuracy change for the update N_{s-1} -> N_s.
    """
    run_dir = Path(run_dir)
    split = json.loads((run_dir / "splits.json").read_text())
    raw = (run_dir / "dataset.bin").read_bytes()
    n = int(np.frombuffer(raw, "<u8", 1, 12)[0])
    d = int(np.frombuffer(raw, "<u4", 1, 20)[0])
    off = 28
    ids = np.frombuffer(raw, "<i8", n, off)
    labels = np.frombuffer(raw, "<u4", n, off + 8 * n).astype(int)
    feats = np.frombuffer(raw, "<f8", n * d, off + 12 * n).reshape(n, d)
    pos = {int(i): r for r, i in enumerate(ids)}
    x_ids = list(split["test"][0])
    for r in range(2, s + 1):
        x_ids += split["test"][r]
    rows = [pos[i] for i in sorted(x_ids) if labels[pos[i]] == k]
    xs = [feats[r] for r in rows]
    ys = [k] * len(rows)
    ckpts = [read_ckpt(run_dir / "ckpt" / f"round_{j:03d}.ckpt") for j in range(s + 1)]
    dims = ckpts[0][0]
    gsums = [gradsum_bruteforce(ckpts[j][1], dims, xs, ys, k) for j in range(s)]
    correct = []
    for j in range(s):
        c = 0
        for x in xs:
            c += fst_snd(forward_probs(ckpts[j][1], dims, x))[0] == k
        correct.append(c)
    samples = []
    for i in range(1, s):
        delta = ckpts[i][1] - ckpts[i - 1][1]
        ef = float(np.dot(gsums[i - 1], delta))
        samples.append((i, ef, (correct[i] - correct[i - 1]) / len(xs)))
    efs = [smp[1] for smp in samples]
    accs = [smp[2] for smp in samples]
    keep = tukey_keep(efs, accs)
    kx = [e for e, m in zip(efs, keep) if m]
    ky = [a for a, m in zip(accs, keep) if m]
    slope, intercept, r2 = hand_ols(kx, ky)
    ef_now = float(np.dot(gsums[s - 1], ckpts[s][1] - ckpts[s - 1][1]))
    return {"samples": samples, "slope": slope, "intercept": intercept, "r2": r2,
            "ef": ef_now, "predicted": slope * ef_now + intercept, "n_used": len(kx)}
