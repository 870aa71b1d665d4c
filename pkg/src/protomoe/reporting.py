"""Metrics log, activation trace, and learning-curve rendering.

The metrics log is tab-separated text with a versioned header line; floats
are written with repr so identical runs produce identical bytes.
"""

from __future__ import annotations

import warnings

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METRICS_SCHEMA = 1
METRICS_COLUMNS = [
    "iteration", "eval_return_mean", "eval_returns", "expected_kl", "entropy",
    "swap_accepted", "swap_objective_before", "swap_objective_after",
    "compression_removed", "active_clusters",
]


def metrics_header() -> str:
    return f"# metrics schema {METRICS_SCHEMA}\n" + "\t".join(METRICS_COLUMNS) + "\n"


def metrics_line(rec) -> str:
    vals = [
        str(rec.iteration),
        repr(rec.eval_return_mean),
        ",".join(repr(r) for r in rec.eval_returns),
        repr(rec.expected_kl),
        repr(rec.entropy),
        str(rec.swap_accepted),
        repr(rec.swap_objective_before),
        repr(rec.swap_objective_after),
        str(rec.compression_removed),
        str(rec.active_clusters),
    ]
    return "\t".join(vals) + "\n"


def write_metrics(records, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(metrics_header())
        for rec in records:
            fh.write(metrics_line(rec))


def read_metrics(path) -> list:
    """Parse a metrics file into a list of per-iteration dicts."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# metrics schema"):
        raise ValueError(f"{path}: missing metrics schema header")
    columns = lines[1].split("\t")
    out = []
    for line in lines[2:]:
        if not line:
            continue
        parts = line.split("\t")
        row = dict(zip(columns, parts))
        row["iteration"] = int(row["iteration"])
        for key in ("eval_return_mean", "expected_kl", "entropy",
                    "swap_objective_before", "swap_objective_after"):
            row[key] = float(row[key])
        row["eval_returns"] = [float(x) for x in row["eval_returns"].split(",") if x]
        for key in ("swap_accepted", "compression_removed", "active_clusters"):
            row[key] = int(row[key])
        out.append(row)
    return out


def export_activation_trace(policy, env, seed: int, path):
    """One deterministic rollout; per step the memberships, their sum, and the action."""
    rng = np.random.default_rng(seed)
    s = env.reset(rng)
    rows = []
    for t in range(env.horizon):
        psi = policy.memberships(s)
        a = psi @ policy.M
        rows.append((t, psi, float(psi.sum()), a))
        s, _, terminal = env.step(s, a)
        if terminal:
            break
    header = (["t"] + [f"psi_{i}" for i in range(policy.n_clusters)]
              + ["psi_sum"] + [f"a_{j}" for j in range(policy.action_dim)])
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\t".join(header) + "\n")
        for t, psi, total, a in rows:
            cells = [str(t)] + [repr(float(x)) for x in psi] + [repr(total)] \
                + [repr(float(x)) for x in a]
            fh.write("\t".join(cells) + "\n")
    return len(rows)


def mean_and_band(curves: np.ndarray):
    """Mean curve and 95% confidence half-width (1.96 * sd / sqrt(n)) across runs."""
    curves = np.asarray(curves, dtype=np.float64)
    mean = curves.mean(axis=0)
    n = curves.shape[0]
    if n < 2:
        return mean, np.zeros_like(mean)
    half = 1.96 * curves.std(axis=0, ddof=1) / np.sqrt(n)
    return mean, half


def plot_learning_curve(metrics_paths, path):
    """Render mean eval return per iteration with a confidence band, as SVG."""
    if not metrics_paths:
        raise ValueError("need at least one metrics log")
    curves = [np.array([row["eval_return_mean"] for row in read_metrics(p)])
              for p in metrics_paths]
    shortest = min(len(c) for c in curves)
    if any(len(c) != shortest for c in curves):
        warnings.warn("metrics logs have different lengths; truncating to "
                      f"{shortest} iterations")
        curves = [c[:shortest] for c in curves]
    mean, half = mean_and_band(np.vstack(curves))

    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(shortest)
    ax.plot(x, mean, label=f"mean over {len(curves)} run(s)")
    ax.fill_between(x, mean - half, mean + half, alpha=0.3, label="95% CI")
    ax.set_xlabel("iteration")
    ax.set_ylabel("eval return")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return mean, half
