"""Execute validated scenarios and write their artifacts.

Every run writes into ``<out_dir>/<scenario name>/``:

* one or more CSV tables (17 significant digits, header row);
* ``summary.json`` with the headline numbers of the run;
* ``manifest.json`` with the resolved configuration, the package version,
  the random generator and SHA-256 checksums of the other files.

No timestamps or host details are written, so a re-run with the same seed
reproduces every file byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .measure import (
    adiabatic_convergence_study,
    adiabatic_measure,
    born_weights,
    collapse_on_reading,
    impulsive_measure,
    pointer_profile,
    simultaneous_adiabatic,
)
from .models import (
    build_spin_model,
    error_scaling_study,
    kaon_scaling,
    spin_weak_values,
    transition_scaling_study,
)
from .propagate import (
    RNG_NAME,
    decompose_ket,
    evolve,
    format_float,
    outcome_distribution,
    sample_collapse,
    sample_collapses,
)
from .scenario import Scenario, envelope_of
from .spectral import biorthogonality_residual, decompose, perturbed_eigenvalue, reconstruct
from .twostate import two_state_from_branch, weak_value

__all__ = ["run_scenario", "write_csv", "sha256_file"]


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    return format_float(x)


def write_csv(path, header, rows) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(x) for x in row])


def _json_value(x):
    if isinstance(x, dict):
        return {str(k): _json_value(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_value(v) for v in x]
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x)
    return x


def _write_json(path, obj) -> None:
    text = json.dumps(_json_value(obj), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class _OutDir:
    """Output directory that remembers which files a run wrote."""

    def __init__(self, root: Path):
        self.root = root
        self.written: list[str] = []

    def path(self, name: str) -> Path:
        if name not in self.written:
            self.written.append(name)
        return self.root / name

    def csv(self, name, header, rows) -> None:
        write_csv(self.path(name), header, rows)


def _monotone_decreasing(values) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def _outcome_dict(out) -> dict:
    return {
        "shift_Q": out.pointer_shift_position,
        "shift_P": out.pointer_shift_momentum,
        "branch": out.branch,
        "fidelity": out.fidelity,
        "error_norm": out.error_norm,
        "weight": out.weight,
        "expected_shift": out.expected_shift,
    }


class _Recorder:
    """Collects warnings raised during a run as plain messages."""

    def __enter__(self):
        self._ctx = warnings.catch_warnings(record=True)
        self.records = self._ctx.__enter__()
        warnings.simplefilter("always")
        return self

    def __exit__(self, *exc):
        self._ctx.__exit__(*exc)
        return False

    @property
    def messages(self) -> list[str]:
        seen = []
        for w in self.records:
            msg = f"{w.category.__name__}: {w.message}"
            if msg not in seen:
                seen.append(msg)
        return seen


# -- kinds ------------------------------------------------------------------------


def _run_impulsive(sc: Scenario, out: _OutDir, threads: int):
    A = sc.inputs["observables"][0]
    pointer = sc.inputs["pointers"][0]
    joint, res = impulsive_measure(sc.inputs["initial"], A, pointer)
    pointer_profile(joint, pointer, out.path("pointer_profile.csv"))
    values, weights = born_weights(joint, A, pointer)
    return {
        "outcome": _outcome_dict(res),
        "born_weights": [{"eigenvalue": v, "weight": w} for v, w in zip(values, weights)],
    }


def _run_adiabatic(sc: Scenario, out: _OutDir, threads: int):
    cfg = sc.config
    pointer = sc.inputs["pointers"][0]
    joint, res = adiabatic_measure(
        sc.inputs["H"],
        sc.inputs["observables"][0],
        sc.inputs["initial"],
        pointer,
        envelope_of(cfg["envelope"]),
        cfg["steps"],
        threads=threads,
        fidelity_threshold=cfg["fidelity_threshold"],
    )
    pointer_profile(joint, pointer, out.path("pointer_profile.csv"))
    return {"outcome": _outcome_dict(res)}


def _run_simultaneous(sc: Scenario, out: _OutDir, threads: int):
    cfg = sc.config
    H, B = sc.inputs["H"], sc.inputs["system"]
    obs = sc.inputs["observables"]
    _, outcomes = simultaneous_adiabatic(
        H,
        obs,
        sc.inputs["initial"],
        sc.inputs["pointers"],
        envelope_of(cfg["envelope"]),
        cfg["steps"],
        threads=threads,
        fidelity_threshold=cfg["fidelity_threshold"],
    )
    rows, shifts = [], []
    for i, (o, c) in enumerate(zip(outcomes, cfg["observables"])):
        w = o.expected_shift
        rows.append([i, c.get("label", f"A{i}"), o.pointer_shift_position, o.pointer_shift_momentum,
                     w.real, w.imag, o.fidelity, o.error_norm])
        shifts.append(_outcome_dict(o))
    out.csv(
        "shifts.csv",
        ["observable", "label", "shift_Q", "shift_P", "weak_re", "weak_im", "fidelity", "error_norm"],
        rows,
    )
    results = {"outcomes": shifts}
    if "repeat" in cfg:
        results["repeat"] = _repeat(sc, H, B, out, threads)
    return results


def _repeat(sc: Scenario, H, B, out: _OutDir, threads: int) -> dict:
    """Measure, collapse on the pointer reading, then measure the same observable again."""
    rcfg = sc.config["repeat"]
    A = sc.inputs["observables"][rcfg["observable"]]
    psi = sc.inputs["repeat"]["initial"]
    pointer = sc.inputs["repeat"]["pointer"]
    env = envelope_of(rcfg["envelope"])

    joint1, first = adiabatic_measure(H, A, psi, pointer, env, threads=threads)
    dist = outcome_distribution(decompose_ket(psi, B), B, env.T)
    branch = sample_collapse(dist, sc.seed)
    weak = [weak_value(two_state_from_branch(B, j), A) for j in range(B.dim)]
    w = weak[branch]
    others = [abs(weak[j].real - w.real) for j in range(B.dim)
              if j != branch and dist.probabilities[j] > 0]
    halfwidth = 0.5 * min(others) if others else 4.0 * pointer.sigma_q
    reading = collapse_on_reading(joint1, pointer, w.real, halfwidth)
    collapsed = reading.state
    fid = float(abs(np.vdot(B.ket(branch), collapsed)) ** 2)

    joint2, second = adiabatic_measure(H, A, collapsed, pointer, env, threads=threads)
    dist2 = outcome_distribution(decompose_ket(collapsed, B), B, env.T)

    out.csv("repeat.csv",
        ["stage", "branch", "shift_Q", "shift_P", "weak_re", "weak_im", "branch_probability"],
        [
            ["first", branch, first.pointer_shift_position, first.pointer_shift_momentum,
             w.real, w.imag, dist.probabilities[branch]],
            ["second", second.branch, second.pointer_shift_position, second.pointer_shift_momentum,
             second.expected_shift.real, second.expected_shift.imag,
             dist2.probabilities[second.branch]],
        ],
    )
    return {
        "sampled_branch": branch,
        "branch_probabilities": dist.probabilities.tolist(),
        "first_weak_value": w,
        "reading_window": [w.real - halfwidth, w.real + halfwidth],
        "reading_probability": reading.probability,
        "collapsed_purity": reading.purity,
        "collapsed_fidelity": fid,
        "second_branch": second.branch,
        "second_branch_probability": float(dist2.probabilities[second.branch]),
        "second_weak_value": second.expected_shift,
        "second_shift_Q": second.pointer_shift_position,
        "weak_value_difference": abs(second.expected_shift - w),
        "second_shift_deviation": abs(second.pointer_shift_position - w.real),
    }


def _run_convergence(sc: Scenario, out: _OutDir, threads: int):
    cfg = sc.config
    psi = sc.inputs["initial"]
    A = sc.inputs["observables"][0]
    rows = adiabatic_convergence_study(
        sc.inputs["H"], A, psi, cfg["T_list"], sc.inputs["pointers"][0],
        cfg["envelope"]["ramp"], threads=threads,
    )
    out.csv(
        "convergence.csv",
        ["T", "shift_Q", "shift_P", "error_norm", "fidelity", "deviation"],
        [[r.T, r.shift_q, r.shift_p, r.error_norm, r.fidelity, r.deviation] for r in rows],
    )
    dev = [r.deviation for r in rows]
    err = [r.error_norm for r in rows]
    return {
        "expected_shift": rows[-1].expected,
        "input_expectation": complex(np.vdot(psi, A @ psi) / np.vdot(psi, psi)),
        "final_shift_Q": rows[-1].shift_q,
        "final_deviation": dev[-1],
        "deviations": dev,
        "error_norms": err,
        "deviation_decreasing": _monotone_decreasing(dev),
        "error_norm_decreasing": _monotone_decreasing(err),
    }


def _run_scaling(sc: Scenario, out: _OutDir, threads: int):
    cfg = sc.config
    if cfg["quantity"] == "transition":
        study = transition_scaling_study(cfg["N_list"], cfg["lamN"], cfg["t_scaled"], cfg["T_scaled"])
    else:
        study = error_scaling_study(cfg["N_list"], cfg["lamN"], cfg["T_scaled"], cfg["P"], cfg["ramp"])
    out.csv("scaling.csv", list(study.columns), study.rows)
    return {
        "quantity": study.quantity,
        "slope": study.slope,
        "values": [r[-1] for r in study.rows],
    }


def _random_matrix(rng, d):
    return rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))


def _run_biorthogonality(sc: Scenario, out: _OutDir, threads: int):
    cfg = sc.config
    rng = np.random.Generator(np.random.PCG64(sc.seed))
    lo, hi = cfg["dim_range"]
    rows = []
    for k in range(cfg["count"]):
        d = int(rng.integers(lo, hi + 1))
        H = _random_matrix(rng, d)
        B = decompose(H)
        w = B.eigenvalues
        gap = float(np.min(np.abs(w[:, None] - w[None, :]) + np.diag(np.full(d, np.inf)))) if d > 1 else math.inf
        rows.append([k, d, biorthogonality_residual(B), float(np.max(np.abs(reconstruct(B) - H))),
                     gap if math.isfinite(gap) else None])
    out.csv("audit.csv", ["index", "dim", "max_offdiag", "reconstruction_residual", "min_gap"], rows)
    return {
        "count": len(rows),
        "max_offdiag": max(r[2] for r in rows),
        "max_reconstruction_residual": max(r[3] for r in rows),
    }


def _run_weak_values(sc: Scenario, out: _OutDir, threads: int):
    cfg = sc.config
    B = sc.inputs["system"]
    tsv = two_state_from_branch(B, cfg["branch"])
    rows, results = [], []
    for i, (A, c, e) in enumerate(zip(sc.inputs["observables"], cfg["observables"], sc.inputs["expected"])):
        w = weak_value(tsv, A)
        err = None if e is None else abs(w - e)
        label = c.get("label", f"A{i}")
        rows.append([label, w.real, w.imag, None if e is None else e.real, None if e is None else e.imag, err])
        results.append({"label": label, "value": w, "expected": e, "abs_error": err})
    spin = []
    if "spin_weak_values" in cfg:
        for N in cfg["spin_weak_values"]["N_list"]:
            model = build_spin_model(N, 1.0 / N, warn=False)
            Sw = spin_weak_values(model)
            ref = np.array([N, N, 1j * N])
            for axis, w, r in zip("xyz", Sw, ref):
                rows.append([f"S_{axis}(N={N:g})", w.real, w.imag, r.real, r.imag, abs(w - r)])
            spin.append({"N": N, "value": Sw.tolist(), "max_abs_error": float(np.max(np.abs(Sw - ref)))})
    out.csv("weak_values.csv", ["label", "re", "im", "expected_re", "expected_im", "abs_error"], rows)
    return {
        "branch": cfg["branch"],
        "eigenvalue": complex(B.eigenvalues[cfg["branch"]]),
        "observables": results,
        "spin_weak_values": spin,
    }


def _run_perturbation(sc: Scenario, out: _OutDir, threads: int):
    cfg = sc.config
    rng = np.random.Generator(np.random.PCG64(sc.seed))
    c = cfg["coupling"]
    d = cfg["dim"]
    rows = []
    for k in range(cfg["count"]):
        H = _random_matrix(rng, d)
        X = _random_matrix(rng, d)
        A = (X + X.conj().T) / 2
        B = decompose(H)
        for i in range(d):
            res = []
            for coupling in (c, c / 2):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    pr = perturbed_eigenvalue(B, A, coupling, i)
                exact = np.linalg.eigvals(H + coupling * A)
                res.append(float(np.min(np.abs(exact - pr.perturbed))))
            rows.append([k, i, B.eigenvalues[i].real, B.eigenvalues[i].imag, res[0], res[1], res[0] / res[1]])
    out.csv("perturbation.csv",
        ["instance", "branch", "omega_re", "omega_im", "residual", "residual_half", "ratio"],
        rows,
    )
    ratios = [r[-1] for r in rows]
    return {"instances": cfg["count"], "min_ratio": min(ratios), "max_ratio": max(ratios)}


def _run_outcome(sc: Scenario, out: _OutDir, threads: int):
    cfg = sc.config
    H, B, psi = sc.inputs["H"], sc.inputs["system"], sc.inputs["initial"]
    alpha = decompose_ket(psi, B)
    n = cfg["samples"]
    rows, per_T = [], []
    for k, T in enumerate(cfg["T_list"]):
        dist = outcome_distribution(alpha, B, T)
        draws = sample_collapses(dist, sc.seed + k, n)
        counts = np.bincount(draws, minlength=B.dim)
        # independent route: dense exponential, then re-expand in eigenkets
        evolved = evolve(psi, H, T, samples=1, method="expm").states[0]
        w_evolved = np.abs(decompose_ket(evolved, B)) ** 2
        zmax = 0.0
        for i in range(B.dim):
            p = dist.probabilities[i]
            sigma = math.sqrt(n * p * (1 - p))
            z = 0.0 if sigma == 0 else (counts[i] - n * p) / sigma
            zmax = max(zmax, abs(z))
            rows.append([T, i, dist.weights[i], w_evolved[i], p, int(counts[i]), counts[i] / n, z])
        per_T.append({"T": T, "probabilities": dist.probabilities.tolist(),
                      "frequencies": (counts / n).tolist(), "max_abs_z": zmax})
    out.csv("outcome.csv",
        ["T", "branch", "weight", "evolved_weight", "probability", "count", "frequency", "z"],
        rows,
    )
    return {"samples": n, "rng": RNG_NAME, "per_T": per_T, "max_abs_z": max(r["max_abs_z"] for r in per_T)}


def _run_kaon(sc: Scenario, out: _OutDir, threads: int):
    ks = kaon_scaling(sc.inputs["epsilon_list"], sc.inputs["omega_L"], sc.inputs["omega_S"])
    rows = []
    for eps, (abs_eps, ket, lr) in zip(sc.inputs["epsilon_list"], ks.rows):
        rows.append([eps.real, eps.imag, abs_eps, ket, ket / (2 * abs_eps), lr])
    out.csv("kaon.csv",
        ["epsilon_re", "epsilon_im", "abs_epsilon", "ket_overlap", "ket_overlap_over_2eps", "one_minus_lr"],
        rows,
    )
    return {"ket_slope": ks.ket_slope, "left_right_slope": ks.left_right_slope}


_HANDLERS = {
    "impulsive": _run_impulsive,
    "adiabatic": _run_adiabatic,
    "simultaneous": _run_simultaneous,
    "convergence-study": _run_convergence,
    "scaling-study": _run_scaling,
    "biorthogonality-audit": _run_biorthogonality,
    "weak-values": _run_weak_values,
    "perturbation-audit": _run_perturbation,
    "outcome-sampling": _run_outcome,
    "kaon-scaling": _run_kaon,
}


def run_scenario(sc: Scenario, out_dir, threads: int = 1) -> dict:
    """Run ``sc`` and write its artifacts under ``out_dir / sc.name``.

    Returns the summary dictionary (also written to ``summary.json``).
    """
    root = Path(out_dir) / sc.name
    root.mkdir(parents=True, exist_ok=True)
    out = _OutDir(root)
    with _Recorder() as rec:
        results = _HANDLERS[sc.kind](sc, out, threads)
    summary = {
        "scenario": sc.name,
        "kind": sc.kind,
        "seed": sc.seed,
        "results": results,
        "warnings": rec.messages,
    }
    _write_json(out.path("summary.json"), summary)
    files = sorted(out.written)
    manifest = {
        "scenario": sc.name,
        "package": "nhmeasure",
        "version": __version__,
        "rng": RNG_NAME,
        "config": sc.config,
        "outputs": {name: sha256_file(root / name) for name in files},
    }
    _write_json(root / "manifest.json", manifest)
    return summary
