"""Human-readable policy files and the visited-state archive.

The policy file is line-oriented text: every number is written as a C99
hexadecimal float (authoritative, bit-exact on reload) followed by a decimal
rendering in parentheses for the reader. Serialization is deterministic, so
serialize -> load -> serialize reproduces the file byte for byte.
"""

from __future__ import annotations

import numpy as np

from .core import StateNormalizer
from .policy import MoEPolicy

FORMAT_VERSION = 1


class PolicyFormatError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _fmt_floats(values) -> str:
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    hexes = " ".join(float(v).hex() for v in values)
    decs = " ".join(repr(float(v)) for v in values)
    return f"{hexes} ({decs})"


def serialize_policy(policy: MoEPolicy, path):
    lines = [
        "# prototype-mixture policy: act like the nearby expert, else do nothing",
        f"format {FORMAT_VERSION}",
        f"kind {policy.kind}",
        f"state_dim {policy.state_dim}",
        f"action_dim {policy.action_dim}",
        f"clusters {policy.n_clusters}",
        f"tau {_fmt_floats(policy.tau)}",
        f"sigma {_fmt_floats(policy.sigma)}",
        f"norm_mean {_fmt_floats(policy.normalizer.mean)}",
        f"norm_std {_fmt_floats(policy.normalizer.std)}",
        "# default expert: action is the zero vector, unnormalized membership fixed to 1",
    ]
    for i in range(policy.n_clusters):
        lines.append(f"expert {i}")
        lines.append(f"active {int(policy.active[i])}")
        lines.append(f"weight {_fmt_floats(policy.c[i])}")
        lines.append(f"action {_fmt_floats(policy.M[i])}")
        lines.append(f"center {_fmt_floats(policy.centers[i])}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_floats(tokens, expected: int, line_no: int) -> np.ndarray:
    vals = []
    for tok in tokens:
        if tok.startswith("("):
            break
        try:
            vals.append(float.fromhex(tok))
        except ValueError:
            raise PolicyFormatError(f"bad hexadecimal float {tok!r}", line_no) from None
    if len(vals) != expected:
        raise PolicyFormatError(f"expected {expected} values, got {len(vals)}", line_no)
    return np.array(vals, dtype=np.float64)


def load_policy(path) -> MoEPolicy:
    with open(path, "r", encoding="ascii") as fh:
        raw = fh.read().splitlines()

    fields = {}
    expert_rows = []
    current = None
    for line_no, line in enumerate(raw, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        key, rest = parts[0], parts[1:]
        if key == "expert":
            current = {"index": rest[0] if rest else "?", "line": line_no}
            expert_rows.append(current)
        elif key in ("active", "weight", "action", "center"):
            if current is None:
                raise PolicyFormatError(f"{key!r} before any expert header", line_no)
            current[key] = (rest, line_no)
        else:
            fields[key] = (rest, line_no)

    def scalar(name, conv=int):
        if name not in fields:
            raise PolicyFormatError(f"missing field {name!r}", len(raw))
        rest, line_no = fields[name]
        try:
            return conv(rest[0])
        except (ValueError, IndexError):
            raise PolicyFormatError(f"bad value for {name!r}", line_no) from None

    version = scalar("format")
    if version != FORMAT_VERSION:
        raise PolicyFormatError(f"unsupported format version {version}", fields["format"][1])
    kind = scalar("kind", str)
    ds = scalar("state_dim")
    da = scalar("action_dim")
    k = scalar("clusters")

    def vector(name, expected):
        rest, line_no = fields[name]
        return _parse_floats(rest, expected, line_no)

    tau = float(vector("tau", 1)[0])
    sigma = vector("sigma", da)
    normalizer = StateNormalizer(vector("norm_mean", ds), vector("norm_std", ds))

    if len(expert_rows) != k:
        raise PolicyFormatError(f"expected {k} experts, found {len(expert_rows)}", len(raw))
    centers = np.empty((k, ds))
    c = np.empty(k)
    m = np.empty((k, da))
    active = np.empty(k, dtype=bool)
    for i, row in enumerate(expert_rows):
        for name in ("active", "weight", "action", "center"):
            if name not in row:
                raise PolicyFormatError(f"expert {row['index']} missing {name!r}", row["line"])
        active[i] = bool(int(row["active"][0][0]))
        c[i] = float(_parse_floats(row["weight"][0], 1, row["weight"][1])[0])
        m[i] = _parse_floats(row["action"][0], da, row["action"][1])
        centers[i] = _parse_floats(row["center"][0], ds, row["center"][1])

    return MoEPolicy(centers, c, m, sigma, tau, normalizer, active=active, kind=kind)


def save_archive(states: np.ndarray, path):
    """Visited states as a flat binary array for provenance checks."""
    np.save(path, np.asarray(states, dtype=np.float64), allow_pickle=False)


def load_archive(path) -> np.ndarray:
    return np.load(path, allow_pickle=False)


def centers_in_archive(policy: MoEPolicy, archive_states: np.ndarray) -> np.ndarray:
    """Per-cluster flag: is the center bit-identical to some archived state."""
    rows = {row.tobytes() for row in np.ascontiguousarray(archive_states)}
    return np.array([np.ascontiguousarray(center).tobytes() in rows
                     for center in policy.centers])
