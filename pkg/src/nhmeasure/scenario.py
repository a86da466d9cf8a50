"""Scenario files: parsing, validation and resolution into numerical inputs.

A scenario is a YAML mapping.  Complex numbers are written either as plain
numbers or as two-element ``[re, im]`` lists; vectors are lists of such
entries and matrices are row-major lists of rows.  The full schema is
documented in ``docs/file_formats.md``.

Validation builds every operator and state the run will need, so dimension
mistakes surface before any evolution starts.  Errors name the offending
field with a dotted path such as ``observables[1].matrix``.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import InvalidSpin, NHMeasureError, NumericalError, ParseError, ValidationError
from .measure import Envelope, MAX_GRID_POINTS, MAX_POINTERS, PointerState, gaussian_pointer
from .models import build_kaon_like, build_spin_model, effective_hamiltonian, pauli, spin_half_state
from .spectral import decompose, is_hermitian

__all__ = [
    "KINDS",
    "MODEL_TYPES",
    "Scenario",
    "parse_text",
    "load_scenario",
    "bundled_scenarios",
    "bundled_path",
    "resolve",
]

KINDS = (
    "impulsive",
    "adiabatic",
    "simultaneous",
    "convergence-study",
    "scaling-study",
    "biorthogonality-audit",
    "weak-values",
    "perturbation-audit",
    "outcome-sampling",
    "kaon-scaling",
)

MODEL_TYPES = ("matrix", "spin-effective", "kaon-like", "hermitian-random")

_COMMON = {"name", "description", "kind", "seed"}
_ALLOWED = {
    "impulsive": {"model", "initial", "observables", "pointer"},
    "adiabatic": {"model", "initial", "observables", "pointer", "envelope", "steps", "fidelity_threshold"},
    "simultaneous": {"model", "initial", "observables", "pointer", "envelope", "steps",
                     "fidelity_threshold", "repeat"},
    "convergence-study": {"model", "initial", "observables", "pointer", "envelope", "T_list"},
    "scaling-study": {"quantity", "N_list", "lamN", "t_scaled", "T_scaled", "P", "ramp"},
    "biorthogonality-audit": {"count", "dim_range"},
    "weak-values": {"model", "branch", "observables", "spin_weak_values"},
    "perturbation-audit": {"count", "dim", "coupling"},
    "outcome-sampling": {"model", "initial", "T_list", "samples"},
    "kaon-scaling": {"epsilon_list", "omega_L", "omega_S"},
}
_REQUIRED = {
    "impulsive": {"initial", "observables"},
    "adiabatic": {"model", "initial", "observables", "envelope"},
    "simultaneous": {"model", "initial", "observables", "envelope"},
    "convergence-study": {"model", "initial", "observables", "T_list"},
    "scaling-study": {"quantity", "N_list"},
    "biorthogonality-audit": set(),
    "weak-values": {"model", "observables"},
    "perturbation-audit": set(),
    "outcome-sampling": {"model", "initial", "T_list"},
    "kaon-scaling": {"epsilon_list"},
}


@dataclass
class Scenario:
    """A validated scenario.

    ``config`` is the resolved configuration (defaults filled in, JSON
    serializable) and is what the manifest records.  ``inputs`` holds the
    numerical objects built during validation.
    """

    name: str
    kind: str
    config: dict
    inputs: dict = field(default_factory=dict, repr=False)
    source: str | None = None

    @property
    def seed(self) -> int:
        return int(self.config["seed"])


# -- parsing ----------------------------------------------------------------


def parse_text(text: str, source: str | None = None) -> dict:
    """Parse YAML text into a mapping, raising :class:`ParseError` with position."""
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        msg = exc.problem or str(exc)
        if mark is None:
            raise ParseError(msg) from None
        raise ParseError(msg, mark.line + 1, mark.column + 1) from None
    except yaml.YAMLError as exc:
        raise ParseError(str(exc)) from None
    if not isinstance(data, dict):
        raise ParseError("scenario file must contain a mapping at the top level", 1, 1)
    return data


def bundled_dir():
    return resources.files("nhmeasure") / "scenarios"


def bundled_scenarios() -> list[str]:
    """Names of the scenarios shipped with the package, sorted."""
    return sorted(p.name[:-5] for p in bundled_dir().iterdir() if p.name.endswith(".yaml"))


def bundled_path(name: str):
    return bundled_dir() / f"{name}.yaml"


def load_scenario(path_or_name, seed: int | None = None) -> Scenario:
    """Read, parse and validate a scenario file or bundled scenario name.

    Raises ``OSError`` when the file cannot be read.
    """
    p = Path(path_or_name)
    if not p.exists() and str(path_or_name) in bundled_scenarios():
        text = bundled_path(str(path_or_name)).read_text()
        source = f"bundled:{path_or_name}"
    else:
        text = p.read_text()
        source = str(p)
    data = parse_text(text, source)
    if seed is not None:
        data["seed"] = int(seed)
    sc = resolve(data)
    sc.source = source
    return sc


# -- field helpers ------------------------------------------------------------


def _fail(path: str, msg: str):
    raise ValidationError(path, msg)


def _mapping(data, path) -> dict:
    if not isinstance(data, dict):
        _fail(path, f"expected a mapping, got {type(data).__name__}")
    return data


def _check_keys(d: dict, allowed: set, path: str) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        where = f"{path}." if path else ""
        _fail(f"{where}{extra[0]}", f"unknown field (allowed: {', '.join(sorted(allowed))})")


def _number(x, path, *, positive=False, nonneg=False) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        _fail(path, f"expected a number, got {x!r}")
    x = float(x)
    if not math.isfinite(x):
        _fail(path, "must be finite")
    if positive and not x > 0:
        _fail(path, f"must be positive, got {x:g}")
    if nonneg and x < 0:
        _fail(path, f"must be non-negative, got {x:g}")
    return x


def _integer(x, path, *, minimum=None) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        _fail(path, f"expected an integer, got {x!r}")
    if minimum is not None and x < minimum:
        _fail(path, f"must be at least {minimum}, got {x}")
    return int(x)


def _complex(x, path) -> complex:
    if isinstance(x, (list, tuple)):
        if len(x) != 2:
            _fail(path, "complex numbers are written as [re, im]")
        return complex(_number(x[0], f"{path}[0]"), _number(x[1], f"{path}[1]"))
    return complex(_number(x, path))


def _vector(x, path) -> np.ndarray:
    if not isinstance(x, list) or not x:
        _fail(path, "expected a non-empty list of complex entries")
    return np.array([_complex(v, f"{path}[{i}]") for i, v in enumerate(x)], dtype=complex)


def _matrix(x, path) -> np.ndarray:
    if not isinstance(x, list) or not x:
        _fail(path, "expected a non-empty list of rows")
    rows = [_vector(r, f"{path}[{i}]") for i, r in enumerate(x)]
    n = len(rows)
    for i, r in enumerate(rows):
        if r.shape[0] != n:
            _fail(f"{path}[{i}]", f"row has {r.shape[0]} entries; a {n}-row matrix must be square")
    return np.stack(rows)


def _number_list(x, path, *, positive=False, increasing=False) -> list[float]:
    if not isinstance(x, list) or not x:
        _fail(path, "expected a non-empty list of numbers")
    vals = [_number(v, f"{path}[{i}]", positive=positive) for i, v in enumerate(x)]
    if increasing and any(b <= a for a, b in zip(vals, vals[1:])):
        _fail(path, "values must be strictly increasing")
    return vals


def _plain(z: complex):
    """JSON form of a complex number."""
    return [float(z.real), float(z.imag)]


# -- models, states, observables ---------------------------------------------


def _rand_herm(rng, d):
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (X + X.conj().T) / 2


def _resolve_model(data, path, scenario_seed):
    d = _mapping(data, path)
    mtype = d.get("type")
    if mtype not in MODEL_TYPES:
        _fail(f"{path}.type", f"must be one of {', '.join(MODEL_TYPES)}, got {mtype!r}")
    out = {"type": mtype}
    rng = None
    if mtype == "matrix":
        _check_keys(d, {"type", "H"}, path)
        if "H" not in d:
            _fail(f"{path}.H", "required for a matrix model")
        H = _matrix(d["H"], f"{path}.H")
        out["H"] = [[_plain(z) for z in row] for row in H]
    elif mtype == "spin-effective":
        _check_keys(d, {"type", "lamN", "N"}, path)
        lamN = _number(d.get("lamN", 1.0), f"{path}.lamN", positive=True)
        N = _number(d.get("N", 20), f"{path}.N", positive=True)
        try:
            model = build_spin_model(N, lamN / N, warn=False)
        except InvalidSpin as exc:
            _fail(f"{path}.N", str(exc))
        H = effective_hamiltonian(model)
        out.update(lamN=lamN, N=model.N)
    elif mtype == "kaon-like":
        _check_keys(d, {"type", "epsilon", "omega_L", "omega_S"}, path)
        for key in ("epsilon", "omega_L", "omega_S"):
            if key not in d:
                _fail(f"{path}.{key}", "required for a kaon-like model")
        eps = _complex(d["epsilon"], f"{path}.epsilon")
        wL = _complex(d["omega_L"], f"{path}.omega_L")
        wS = _complex(d["omega_S"], f"{path}.omega_S")
        try:
            H = build_kaon_like(eps, wL, wS).H
        except NHMeasureError as exc:
            _fail(path, str(exc))
        out.update(epsilon=_plain(eps), omega_L=_plain(wL), omega_S=_plain(wS))
    else:
        _check_keys(d, {"type", "dim", "seed"}, path)
        dim = _integer(d.get("dim", 4), f"{path}.dim", minimum=1)
        seed = _integer(d.get("seed", scenario_seed), f"{path}.seed", minimum=0)
        rng = np.random.Generator(np.random.PCG64(seed))
        H = _rand_herm(rng, dim)
        out.update(dim=dim, seed=seed)
    return out, H, rng


def _resolve_state(data, path, H, system):
    d = _mapping(data, path)
    dim = H.shape[0] if H is not None else None
    keys = [k for k in ("vector", "eigenket", "superposition", "spin") if k in d]
    if len(keys) != 1:
        _fail(path, "give exactly one of vector, eigenket, superposition, spin")
    key = keys[0]
    _check_keys(d, {key}, path)
    if key == "vector":
        psi = _vector(d["vector"], f"{path}.vector")
        cfg = {"vector": [_plain(z) for z in psi]}
    elif key == "spin":
        s = _mapping(d["spin"], f"{path}.spin")
        _check_keys(s, {"axis", "sign"}, f"{path}.spin")
        axis = s.get("axis")
        if axis not in ("x", "y", "z"):
            _fail(f"{path}.spin.axis", f"must be x, y or z, got {axis!r}")
        sign = s.get("sign", 1)
        if sign not in (1, -1):
            _fail(f"{path}.spin.sign", f"must be +1 or -1, got {sign!r}")
        psi = spin_half_state(axis, sign)
        cfg = {"spin": {"axis": axis, "sign": sign}}
    else:
        if system is None:
            if H is not None:
                decompose(H)
            _fail(path, f"{key} needs a model")
        if key == "eigenket":
            i = _integer(d["eigenket"], f"{path}.eigenket", minimum=0)
            if i >= system.dim:
                _fail(f"{path}.eigenket", f"index {i} outside 0..{system.dim - 1}")
            psi = system.ket(i).copy()
            cfg = {"eigenket": i}
        else:
            s = _mapping(d["superposition"], f"{path}.superposition")
            _check_keys(s, {"amplitudes"}, f"{path}.superposition")
            amps = _vector(s.get("amplitudes"), f"{path}.superposition.amplitudes")
            if amps.shape[0] != system.dim:
                _fail(
                    f"{path}.superposition.amplitudes",
                    f"has {amps.shape[0]} entries, model has {system.dim} branches",
                )
            psi = system.kets @ amps
            cfg = {"superposition": {"amplitudes": [_plain(z) for z in amps]}}
    if dim is not None and psi.shape[0] != dim:
        _fail(path, f"state has {psi.shape[0]} components, model dimension is {dim}")
    if not np.any(psi):
        _fail(path, "state is the zero vector")
    return cfg, psi


def _resolve_observable(data, path, dim, rng):
    if data == "identity":
        if dim is None:
            _fail(path, "identity needs a model to fix the dimension")
        return "identity", np.eye(dim, dtype=complex), None
    d = _mapping(data, path)
    keys = [k for k in ("pauli", "matrix", "random-hermitian") if k in d]
    if len(keys) != 1:
        _fail(path, "give exactly one of pauli, matrix, random-hermitian (or the string 'identity')")
    key = keys[0]
    _check_keys(d, {key, "label", "expected"}, path)
    cfg = {}
    if key == "pauli":
        axis = d["pauli"]
        if isinstance(axis, str):
            if axis not in ("x", "y", "z"):
                _fail(f"{path}.pauli", f"axis must be x, y or z, got {axis!r}")
            A = pauli(axis)
            cfg["pauli"] = axis
        else:
            n = _number_list(axis, f"{path}.pauli")
            if len(n) != 3:
                _fail(f"{path}.pauli", "a direction needs three components")
            A = pauli(n)
            cfg["pauli"] = n
    elif key == "matrix":
        A = _matrix(d["matrix"], f"{path}.matrix")
        cfg["matrix"] = [[_plain(z) for z in row] for row in A]
    else:
        if rng is None:
            _fail(path, "random-hermitian observables need a hermitian-random model")
        A = _rand_herm(rng, dim)
        cfg["random-hermitian"] = True
    if dim is not None and A.shape[0] != dim:
        _fail(f"{path}.{key}", f"observable has dimension {A.shape[0]}, model dimension is {dim}")
    if "label" in d:
        if not isinstance(d["label"], str):
            _fail(f"{path}.label", "must be a string")
        cfg["label"] = d["label"]
    expected = None
    if "expected" in d:
        expected = _complex(d["expected"], f"{path}.expected")
        cfg["expected"] = _plain(expected)
    return cfg, A, expected


def _resolve_pointer(data, path):
    d = _mapping(data if data is not None else {}, path)
    _check_keys(d, {"sigma_q", "n_p", "p_max"}, path)
    sigma_q = _number(d.get("sigma_q", 1.0), f"{path}.sigma_q", positive=True)
    n_p = _integer(d.get("n_p", 512), f"{path}.n_p", minimum=2)
    if n_p & (n_p - 1):
        _fail(f"{path}.n_p", f"must be a power of two, got {n_p}")
    if n_p > MAX_GRID_POINTS:
        _fail(f"{path}.n_p", f"at most {MAX_GRID_POINTS}")
    p_max = d.get("p_max")
    if p_max is not None:
        p_max = _number(p_max, f"{path}.p_max", positive=True)
    cfg = {"sigma_q": sigma_q, "n_p": n_p, "p_max": p_max}
    return cfg, gaussian_pointer(sigma_q, n_p, p_max)


def _resolve_envelope(data, path, need_T=True):
    d = _mapping(data if data is not None else {}, path)
    _check_keys(d, {"T", "ramp"} if need_T else {"ramp"}, path)
    ramp = _number(d.get("ramp", 0.1), f"{path}.ramp")
    if not 0 < ramp < 0.5:
        _fail(f"{path}.ramp", f"must lie in (0, 0.5), got {ramp:g}")
    cfg = {"ramp": ramp}
    if need_T:
        if "T" not in d:
            _fail(f"{path}.T", "required")
        cfg["T"] = _number(d["T"], f"{path}.T", positive=True)
    return cfg


# -- top level --------------------------------------------------------------------


def resolve(data: dict) -> Scenario:
    """Validate a parsed scenario mapping and build its numerical inputs."""
    data = copy.deepcopy(_mapping(data, "scenario"))
    kind = data.get("kind")
    if kind not in KINDS:
        _fail("kind", f"must be one of {', '.join(KINDS)}, got {kind!r}")
    _check_keys(data, _COMMON | _ALLOWED[kind], "")
    for key in sorted(_REQUIRED[kind]):
        if key not in data:
            _fail(key, f"required for kind {kind}")
    name = data.get("name")
    if not isinstance(name, str) or not name or any(c in name for c in "/\\"):
        _fail("name", "must be a non-empty string without path separators")
    seed = _integer(data.get("seed", 0), "seed", minimum=0)
    cfg: dict[str, Any] = {"name": name, "kind": kind, "seed": seed}
    if isinstance(data.get("description"), str):
        cfg["description"] = data["description"]
    inputs: dict[str, Any] = {}

    H = system = rng = None
    if "model" in data:
        cfg["model"], H, rng = _resolve_model(data["model"], "model", seed)
        try:
            system = decompose(H)
        except NumericalError:
            # re-raised by whichever key needs the spectrum
            system = None
        inputs["H"], inputs["system"] = H, system
    dim = None if H is None else H.shape[0]

    if "initial" in data:
        cfg["initial"], inputs["initial"] = _resolve_state(data["initial"], "initial", H, system)
        dim = inputs["initial"].shape[0]

    if "observables" in data:
        obs = data["observables"]
        if not isinstance(obs, list) or not obs:
            _fail("observables", "expected a non-empty list")
        limit = {"simultaneous": MAX_POINTERS, "weak-values": None}.get(kind, 1)
        if limit is not None and len(obs) > limit:
            _fail("observables", f"kind {kind} takes at most {limit} observable(s), got {len(obs)}")
        cfgs, mats, expected = [], [], []
        for i, o in enumerate(obs):
            c, A, e = _resolve_observable(o, f"observables[{i}]", dim, rng)
            cfgs.append(c)
            mats.append(A)
            expected.append(e)
        cfg["observables"], inputs["observables"], inputs["expected"] = cfgs, mats, expected
        if kind == "impulsive" and not is_hermitian(mats[0]):
            _fail("observables[0]", "an impulsive measurement needs a hermitian observable")

    if kind in ("impulsive", "adiabatic", "simultaneous", "convergence-study"):
        if kind == "simultaneous" and isinstance(data.get("pointer"), list):
            plist = data["pointer"]
            if len(plist) != len(inputs["observables"]):
                _fail("pointer", f"{len(plist)} pointers for {len(inputs['observables'])} observables")
            resolved = [_resolve_pointer(p, f"pointer[{i}]") for i, p in enumerate(plist)]
            cfg["pointer"] = [r[0] for r in resolved]
            inputs["pointers"] = [r[1] for r in resolved]
        else:
            cfg["pointer"], p = _resolve_pointer(data.get("pointer"), "pointer")
            inputs["pointers"] = [p] * len(inputs["observables"])
        if kind == "simultaneous":
            n = int(np.prod([p.n for p in inputs["pointers"]]))
            if n > MAX_GRID_POINTS:
                _fail("pointer", f"product grid has {n} points (limit {MAX_GRID_POINTS})")

    if kind in ("adiabatic", "simultaneous", "convergence-study"):
        if system is None:
            decompose(H)
        cfg["envelope"] = _resolve_envelope(data.get("envelope"), "envelope", kind != "convergence-study")
        if kind == "convergence-study":
            cfg["T_list"] = _number_list(data["T_list"], "T_list", positive=True, increasing=True)
        else:
            steps = data.get("steps")
            cfg["steps"] = None if steps is None else _integer(steps, "steps", minimum=1)
            thr = _number(data.get("fidelity_threshold", 0.99), "fidelity_threshold")
            if not 0 <= thr <= 1:
                _fail("fidelity_threshold", "must lie in [0, 1]")
            cfg["fidelity_threshold"] = thr
        if kind == "simultaneous" and "repeat" in data:
            cfg["repeat"], inputs["repeat"] = _resolve_repeat(data["repeat"], cfg, inputs, H, system)

    if kind == "scaling-study":
        q = data["quantity"]
        if q not in ("transition", "error-norm"):
            _fail("quantity", f"must be transition or error-norm, got {q!r}")
        Ns = _number_list(data["N_list"], "N_list", positive=True, increasing=True)
        for i, N in enumerate(Ns):
            if abs(2 * N - round(2 * N)) > 1e-12:
                _fail(f"N_list[{i}]", f"2N must be a positive integer, got N = {N:g}")
        cfg.update(quantity=q, N_list=Ns, lamN=_number(data.get("lamN", 1.0), "lamN", positive=True))
        if q == "transition":
            _check_keys(data, _COMMON | {"quantity", "N_list", "lamN", "t_scaled", "T_scaled"}, "")
            t = _number(data.get("t_scaled", 0.25), "t_scaled", positive=True)
            T = _number(data.get("T_scaled", 2 * t), "T_scaled", positive=True)
            if T < t:
                _fail("T_scaled", "post-selection time must not precede the intermediate time")
            cfg.update(t_scaled=t, T_scaled=T)
        else:
            _check_keys(data, _COMMON | {"quantity", "N_list", "lamN", "T_scaled", "P", "ramp"}, "")
            cfg["T_scaled"] = _number(data.get("T_scaled", 1000.0), "T_scaled", positive=True)
            cfg["P"] = _number(data.get("P", 1.0), "P")
            ramp = data.get("ramp")
            if ramp is not None:
                ramp = _number(ramp, "ramp")
                if not 0 < ramp < 0.5:
                    _fail("ramp", f"must lie in (0, 0.5), got {ramp:g}")
            cfg["ramp"] = ramp

    if kind == "biorthogonality-audit":
        cfg["count"] = _integer(data.get("count", 100), "count", minimum=1)
        rng_ = data.get("dim_range", [2, 16])
        if not isinstance(rng_, list) or len(rng_) != 2:
            _fail("dim_range", "expected [min, max]")
        lo = _integer(rng_[0], "dim_range[0]", minimum=1)
        hi = _integer(rng_[1], "dim_range[1]", minimum=lo)
        cfg["dim_range"] = [lo, hi]

    if kind == "weak-values":
        if system is None:
            decompose(H)
        b = _integer(data.get("branch", 0), "branch", minimum=0)
        if b >= system.dim:
            _fail("branch", f"index {b} outside 0..{system.dim - 1}")
        cfg["branch"] = b
        sw = data.get("spin_weak_values")
        if sw is not None:
            sw = _mapping(sw, "spin_weak_values")
            _check_keys(sw, {"N_list"}, "spin_weak_values")
            Ns = _number_list(sw.get("N_list"), "spin_weak_values.N_list", positive=True)
            for i, N in enumerate(Ns):
                if abs(2 * N - round(2 * N)) > 1e-12:
                    _fail(f"spin_weak_values.N_list[{i}]", "2N must be a positive integer")
            cfg["spin_weak_values"] = {"N_list": Ns}

    if kind == "perturbation-audit":
        cfg["count"] = _integer(data.get("count", 50), "count", minimum=1)
        cfg["dim"] = _integer(data.get("dim", 3), "dim", minimum=2)
        c = _number(data.get("coupling", 1e-3), "coupling", positive=True)
        cfg["coupling"] = c

    if kind == "outcome-sampling":
        if system is None:
            decompose(H)
        cfg["T_list"] = _number_list(data["T_list"], "T_list")
        for i, T in enumerate(cfg["T_list"]):
            if T < 0:
                _fail(f"T_list[{i}]", "must be non-negative")
        cfg["samples"] = _integer(data.get("samples", 100000), "samples", minimum=1)

    if kind == "kaon-scaling":
        eps = data["epsilon_list"]
        if not isinstance(eps, list) or len(eps) < 2:
            _fail("epsilon_list", "need at least two values")
        eps = [_complex(e, f"epsilon_list[{i}]") for i, e in enumerate(eps)]
        for i, e in enumerate(eps):
            if e == 0:
                _fail(f"epsilon_list[{i}]", "must be non-zero for a power-law fit")
        wL = _complex(data.get("omega_L", [1.0, -0.005]), "omega_L")
        wS = _complex(data.get("omega_S", [0.5, -0.5]), "omega_S")
        cfg.update(epsilon_list=[_plain(e) for e in eps], omega_L=_plain(wL), omega_S=_plain(wS))
        inputs.update(epsilon_list=eps, omega_L=wL, omega_S=wS)

    return Scenario(name=name, kind=kind, config=cfg, inputs=inputs)


def _resolve_repeat(data, cfg, inputs, H, system):
    d = _mapping(data, "repeat")
    _check_keys(d, {"observable", "initial", "pointer", "envelope"}, "repeat")
    k = _integer(d.get("observable", 0), "repeat.observable", minimum=0)
    if k >= len(inputs["observables"]):
        _fail("repeat.observable", f"index {k} outside 0..{len(inputs['observables']) - 1}")
    init_cfg, psi = _resolve_state(d.get("initial", cfg["initial"]), "repeat.initial", H, system)
    p_cfg, pointer = _resolve_pointer(d.get("pointer"), "repeat.pointer")
    env_cfg = _resolve_envelope(d.get("envelope", cfg["envelope"]), "repeat.envelope")
    rcfg = {"observable": k, "initial": init_cfg, "pointer": p_cfg, "envelope": env_cfg}
    return rcfg, {"initial": psi, "pointer": pointer}


def envelope_of(cfg: dict) -> Envelope:
    return Envelope(cfg["T"], cfg["ramp"])


def pointer_of(cfg: dict) -> PointerState:
    return gaussian_pointer(cfg["sigma_q"], cfg["n_p"], cfg["p_max"])
