"""Reading mechanism files and writing CSV or JSON artifacts."""

from __future__ import annotations

import json
import math
import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .mechanism import BranchingMechanism, stable_mechanism

_REAL = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")


def _real(text: str, whole: str) -> float:
    if _REAL.fullmatch(text) is None:
        raise ConfigError(f"malformed complex number {whole!r}")
    return float(text)


def parse_complex(text: str) -> complex:
    """Parse ``a``, ``a+bi``, ``a-bi`` or ``bi``; whitespace is rejected."""
    if not text or any(c.isspace() for c in text):
        raise ConfigError(f"malformed complex number {text!r}")
    if not text.endswith("i"):
        return complex(_real(text, text), 0.0)
    body = text[:-1]
    # split before the last sign that is not an exponent sign
    cut = max((k for k, c in enumerate(body) if c in "+-" and k > 0
               and body[k - 1] not in "eE"), default=0)
    re_text, im_text = body[:cut], body[cut:]
    if im_text in ("", "+", "-"):
        im_text += "1"
    re_part = _real(re_text, text) if re_text else 0.0
    return complex(re_part, _real(im_text, text))


def parse_complex_list(text: str) -> list[complex]:
    return [parse_complex(p) for p in text.split(",")]


def parse_real_list(text: str) -> list[float]:
    try:
        values = [float(p) for p in text.split(",")]
    except ValueError:
        raise ConfigError(f"malformed list of reals {text!r}") from None
    if not all(math.isfinite(v) for v in values):
        raise ConfigError(f"non-finite value in {text!r}")
    return values


def load_mechanism(source: str) -> BranchingMechanism:
    """A JSON file path or the shorthand ``stable:sigma,alpha``."""
    if source.startswith("stable:"):
        try:
            sigma, alpha = (float(v) for v in source[len("stable:"):].split(","))
        except ValueError:
            raise ConfigError(f"malformed stable shorthand {source!r}; "
                              "expected stable:sigma,alpha") from None
        return stable_mechanism(sigma, alpha)
    try:
        with open(source, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read mechanism file {source!r}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed mechanism config {source!r}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("mechanism config must be a JSON object")
    return BranchingMechanism.from_dict(data)


def _g(x: float) -> str:
    return "%.17g" % x


def flow_csv(times, values) -> str:
    values = np.asarray(values, dtype=complex)
    m = values.shape[1]
    header = ["t"] + [f"{p}_K{j}" for j in range(1, m + 1) for p in ("Re", "Im")]
    lines = [",".join(header)]
    for t, row in zip(times, values):
        cells = [_g(t)]
        for v in row:
            cells += [_g(v.real), _g(v.imag)]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def read_flow_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    rows = [line.split(",") for line in text.strip().splitlines()[1:]]
    data = np.array(rows, dtype=float)
    return data[:, 0], data[:, 1::2] + 1j * data[:, 2::2]


def path_csv(times, states, alive) -> str:
    states = np.asarray(states, dtype=float)
    m = states.shape[1]
    lines = [",".join(["t"] + [f"xi_{j}" for j in range(1, m + 1)] + ["alive"])]
    for t, x, a in zip(times, states, alive):
        lines.append(",".join([_g(t)] + [_g(v) for v in x] + [str(int(a))]))
    return "\n".join(lines) + "\n"


def to_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=True) + "\n"


def write_atomic(path: str | os.PathLike, text: str) -> None:
    """Write via a temporary file in the target directory and rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
