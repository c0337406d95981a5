"""Key-value model files for the random-skeleton analytic engine.

Example::

    # lines are ``key = value``; '#' starts a comment
    P = poisson z=10 K=40
    Q = independent
    delta = lognormal mean=0.04 std=0
    sigma = lognormal mean=0.035 std=0
    omega = lognormal mean=0.2 std=0.0766 j_power=-1
    p0 = 0.01
    lambda = 0 0.5 1
    h = 0.000625
    M = 4096

``P = table K=2`` is followed by ``P.entry = j k prob`` lines, and
``Q = table`` by ``Q.entry = k j prob`` lines.  ``Q = independent`` builds
the non-assortative edge law implied by P.  Optional keys: ``q0``,
``normalize_omega``, ``mode`` (wrap or cap) and ``N`` (enables Monte Carlo
for Poisson laws).
"""

from __future__ import annotations

from dataclasses import dataclass

from ..cascade_lti import MODES
from ..ensemble import Ensemble, LawSpec
from ..netgen import EdgeTypeLaw, NodeTypeLaw, check_consistency, poisson_law


class ModelFileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ModelSpec:
    P: NodeTypeLaw
    Q: EdgeTypeLaw
    ensemble: Ensemble
    lambdas: tuple[float, ...]
    grid_step: float
    M: int
    mode: str = "wrap"
    N: int | None = None
    poisson_z: float | None = None


def _kv(tokens: list[str], where: str) -> dict[str, float]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ModelFileError(f"{where}: expected name=value, got {tok!r}")
        k, v = tok.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise ModelFileError(f"{where}: {k} is not a number") from None
    return out


def _law(value: str, where: str) -> LawSpec:
    tokens = value.split()
    if not tokens or tokens[0] not in ("lognormal", "constant"):
        raise ModelFileError(f"{where}: laws are 'lognormal mean=.. std=..' or 'constant value=..'")
    args = _kv(tokens[1:], where)
    try:
        if tokens[0] == "constant":
            return LawSpec(args.pop("value"), 0.0, **args)
        return LawSpec(args.pop("mean"), args.pop("std", 0.0), **args)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"{where}: {exc}") from None


def parse_model(text: str, name: str = "<model>") -> ModelSpec:
    entries: dict[str, list[tuple[int, str]]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ModelFileError(f"{name}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        entries.setdefault(key, []).append((lineno, value))

    def one(key, required=True):
        vals = entries.get(key, [])
        if len(vals) > 1:
            raise ModelFileError(f"{name}:{vals[1][0]}: {key} given twice")
        if not vals:
            if required:
                raise ModelFileError(f"{name}: missing {key}")
            return None, None
        return vals[0][1], f"{name}:{vals[0][0]}"

    known = {"P", "Q", "P.entry", "Q.entry", "delta", "sigma", "omega", "p0", "q0", "lambda", "h", "M", "mode", "N", "normalize_omega"}
    for key, vals in entries.items():
        if key not in known:
            raise ModelFileError(f"{name}:{vals[0][0]}: unknown key {key!r}")

    pv, where = one("P")
    ptoks = pv.split()
    pargs = _kv(ptoks[1:], where)
    poisson_z = None
    if ptoks[0] == "poisson":
        if "z" not in pargs:
            raise ModelFileError(f"{where}: poisson needs z")
        poisson_z = pargs["z"]
        K = int(pargs.get("K", max(4 * poisson_z, 1)))
        P = poisson_law(poisson_z, K)
    elif ptoks[0] == "table":
        K = int(pargs.get("K", 0))
        trip = [_triple(v, f"{name}:{ln}") for ln, v in entries.get("P.entry", [])]
        if K < 1 or not trip:
            raise ModelFileError(f"{where}: table needs K >= 1 and P.entry lines")
        try:
            P = NodeTypeLaw.from_triples(K, trip)
        except (ValueError, IndexError) as exc:
            raise ModelFileError(f"{where}: {exc}") from None
    else:
        raise ModelFileError(f"{where}: P must be 'poisson z=.. K=..' or 'table K=..'")

    qv, where = one("Q", required=False)
    if qv is None or qv == "independent":
        Q = EdgeTypeLaw.independent(P)
    elif qv == "table":
        trip = [_triple(v, f"{name}:{ln}") for ln, v in entries.get("Q.entry", [])]
        try:
            Q = EdgeTypeLaw.from_triples(P.K, trip)
        except (ValueError, IndexError) as exc:
            raise ModelFileError(f"{where}: {exc}") from None
    else:
        raise ModelFileError(f"{where}: Q must be 'independent' or 'table'")
    rep = check_consistency(P, Q, tol=1e-9)
    if not rep.consistent:
        raise ModelFileError(f"{name}: P and Q are inconsistent (violation {rep.max_violation:.3g})")

    laws = {}
    for key in ("delta", "sigma", "omega"):
        v, where = one(key)
        laws[key] = _law(v, where)
    num = {}
    for key, default in (("p0", 0.0), ("q0", 0.0), ("h", None), ("M", 4096.0), ("N", None)):
        v, where = one(key, required=default is None and key != "N")
        if v is None:
            num[key] = default
            continue
        try:
            num[key] = float(v)
        except ValueError:
            raise ModelFileError(f"{where}: {key} is not a number") from None
    lv, where = one("lambda")
    try:
        lambdas = tuple(float(x) for x in lv.replace(",", " ").split())
    except ValueError:
        raise ModelFileError(f"{where}: lambda values must be numbers") from None
    if not lambdas or any(not 0 <= x <= 1 for x in lambdas):
        raise ModelFileError(f"{where}: lambda values must lie in [0, 1]")
    mode, where = one("mode", required=False)
    mode = mode or "wrap"
    if mode not in MODES:
        raise ModelFileError(f"{where}: mode must be one of {MODES}")
    norm, _ = one("normalize_omega", required=False)
    M = int(num["M"])
    if M < 2 or M & (M - 1):
        raise ModelFileError(f"{name}: M must be a power of two")
    if not num["h"] > 0:
        raise ModelFileError(f"{name}: h must be positive")
    try:
        ens = Ensemble(
            laws["delta"],
            laws["sigma"],
            laws["omega"],
            p0=num["p0"],
            q0=num["q0"],
            normalize_omega=(norm or "false").lower() in ("1", "true", "yes"),
            name=name,
        )
    except ValueError as exc:
        raise ModelFileError(f"{name}: {exc}") from None
    N = None if num["N"] is None else int(num["N"])
    return ModelSpec(P, Q, ens, lambdas, num["h"], M, mode, N, poisson_z)


def _triple(value: str, where: str) -> tuple[int, int, float]:
    parts = value.split()
    if len(parts) != 3:
        raise ModelFileError(f"{where}: entry needs three fields")
    try:
        return int(parts[0]), int(parts[1]), float(parts[2])
    except ValueError:
        raise ModelFileError(f"{where}: bad entry {value!r}") from None


def read_model(path) -> ModelSpec:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from None
    return parse_model(text, str(path))
