"""Command-line pipelines driven by a YAML run configuration.

    elastic-dimer mesh      --config run.yaml --out out/
    elastic-dimer spectrum  --config run.yaml --out out/
    elastic-dimer blowup    --config run.yaml --out out/
    elastic-dimer scatter   --config run.yaml --out out/
    elastic-dimer validate  --config run.yaml --out out/

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 resource cap exceeded.
"""

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .boundary_ops import EvaluationError, IllConditionedError, QuadratureError
from .fields import PREDICTED_EXPONENT, blowup_sweep
from .geometry import DimerConfig, ResourceError, build_sphere_dimer, verify_symmetry, write_mesh
from .kernels import ContrastParams, ElasticMedium, SingularityError
from .oracle import MFSConfig, OracleUnreliable, oracle_energy_matrix
from .resonance import (FormulaDomainError, SpectrumError, asymptotic_frequencies, direct_characteristic_search,
                        generalized_spectrum)
from .rigid_space import (LOG_ENTRIES, check_structure, compute_capacity, constants_from_fits, fit_log_constants,
                          single_gap_constants)
from .scattering import incident_plane_wave, resonance_scan

logger = logging.getLogger("elastic_dimer")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_RESOURCE = 0, 2, 3, 4
TASKS = ("mesh", "spectrum", "blowup", "scatter", "validate")
NUMERICAL_ERRORS = (SpectrumError, FormulaDomainError, IllConditionedError, QuadratureError, EvaluationError,
                    SingularityError, OracleUnreliable, np.linalg.LinAlgError, FloatingPointError)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------
@dataclass
class RunConfig:
    radius: float
    gaps: List[float]
    refinement: int
    medium: ElasticMedium
    contrasts: ContrastParams
    task: Dict[str, Any]
    out_dir: Optional[str]
    seed: int
    raw: Dict[str, Any] = field(repr=False)

    @property
    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def dimer(self, gap: float) -> DimerConfig:
        return DimerConfig(radius=self.radius, gap=gap, refinement=self.refinement)


def _num(block: Dict, key: str, default=None) -> float:
    val = block.get(key, default)
    if val is None:
        raise ConfigError(f"missing value {key!r}")
    try:
        out = float(val)
    except (TypeError, ValueError):
        raise ConfigError(f"{key!r} must be a number, got {val!r}") from None
    if not math.isfinite(out):
        raise ConfigError(f"{key!r} must be finite")
    return out


def parse_config(raw: Dict[str, Any]) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    geo = raw.get("geometry", {}) or {}
    med = raw.get("medium", {}) or {}
    con = raw.get("contrast", {}) or {}
    task = raw.get("task", {}) or {}
    if "gaps" in geo:
        gaps = geo["gaps"]
        if not isinstance(gaps, (list, tuple)) or not gaps:
            raise ConfigError("geometry.gaps must be a nonempty list")
        gaps = [_num({"gap": g}, "gap") for g in gaps]
    else:
        gaps = [_num(geo, "gap", 1e-3)]
    for g in gaps:
        if g <= 0:
            raise ConfigError(f"gap must be positive, got {g}")
    radius = _num(geo, "radius", 1.0)
    if radius <= 0:
        raise ConfigError("radius must be positive")
    refinement = geo.get("refinement", 2)
    if not isinstance(refinement, int) or refinement < 0:
        raise ConfigError("refinement must be a nonnegative integer")
    try:
        medium = ElasticMedium(_num(med, "lam", 1.0), _num(med, "mu", 1.0), _num(med, "rho", 1.0))
        medium.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    eta = _num(con, "eta", 1e-4)
    try:
        if "delta" in con:
            delta = _num(con, "delta")
            contrasts = ContrastParams(delta, eta)
            if "tau" in con and abs(contrasts.tau - _num(con, "tau")) > 1e-9 * max(1.0, contrasts.tau):
                raise ConfigError("contrast block violates tau^2 = delta / eta")
        else:
            contrasts = ContrastParams.from_tau(eta, _num(con, "tau", 1.0))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = (raw.get("output", {}) or {}).get("dir")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    return RunConfig(radius, gaps, refinement, medium, contrasts, dict(task), out, seed, raw)


def load_config(path) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    return parse_config(raw or {})


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------
def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "nan" if not math.isfinite(v) else format(float(v), ".12g")
    return str(v)


def write_csv(path: Path, cfg: RunConfig, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# elastic-dimer {__version__} config {cfg.digest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_json(path: Path, cfg: RunConfig, payload: Dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"version": __version__, "config": cfg.digest, **payload}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_fmt) + "\n")


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------
def cmd_mesh(cfg: RunConfig, out: Path) -> int:
    failed = False
    lines = []
    for g in cfg.gaps:
        geom = build_sphere_dimer(cfg.dimer(g))
        write_mesh(geom.mesh, out / f"mesh_eps{g:g}.txt")
        rep = verify_symmetry(geom.mesh)
        status = "pass" if rep.passed else "fail"
        failed |= not rep.passed
        lines.append(f"eps={g:g} panels={geom.mesh.n_panels} symmetry: {status}")
        for name, dev in sorted(rep.deviations.items()):
            lines.append(f"  {name}: {dev:.3e}")
    (out / "symmetry.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_NUMERICAL if failed else EXIT_OK


def _constants(cfg: RunConfig, sweep) -> Dict:
    if len(sweep) >= 4:
        return constants_from_fits(fit_log_constants(sweep))
    return None


def cmd_spectrum(cfg: RunConfig, out: Path) -> int:
    caps = {g: compute_capacity(cfg.dimer(g), cfg.medium) for g in cfg.gaps}
    sweep = [(g, caps[g].E) for g in cfg.gaps]
    fitted = _constants(cfg, sweep)
    eta = cfg.contrasts.eta
    rows, blocks = [], {}
    for g in cfg.gaps:
        cap = caps[g]
        spec = generalized_spectrum(cap.E, cap.B, cfg.medium, eta)
        C = fitted or single_gap_constants(cap.E, g, cfg.medium, cap.geometry.chart.kappa)
        asym = asymptotic_frequencies(cap.B, C, cfg.medium, eta, g, cap.geometry.chart.kappa, cap.E)
        for e in sorted(spec.entries, key=lambda e: e.mode):
            rows.append((g, e.mode, e.omega, asym.omegas.get(e.mode, float("nan")), e.block, e.classification))
        blocks[f"{g:g}"] = {"flags": asym.flags, "omega": {str(e.mode): e.omega for e in spec.entries}}
        grid = cfg.task.get("direct_search")
        if grid:
            ws = np.linspace(float(grid["min"]), float(grid["max"]), int(grid["points"]))
            res = direct_characteristic_search(cap.geometry.mesh, cfg.medium, cfg.contrasts, ws)
            write_csv(out / f"direct_search_eps{g:g}.csv", cfg, ["omega", "sigma_min"], zip(res.omegas, res.sigma))
            blocks[f"{g:g}"]["direct_minima"] = list(map(float, res.minima))
    write_csv(out / "spectrum.csv", cfg, ["epsilon", "mode", "omega_num", "omega_asym", "block", "class"], rows)
    if fitted:
        fits = fit_log_constants(sweep)
        write_csv(out / "log_constants.csv", cfg, ["i", "j", "slope", "intercept", "residual"],
                  [(i, j, fits[(i, j)].slope, fits[(i, j)].intercept, fits[(i, j)].residual) for i, j in LOG_ENTRIES])
    write_json(out / "spectrum.json", cfg, {"gaps": blocks})
    print(f"spectrum: {len(rows)} rows over {len(cfg.gaps)} gap(s)")
    return EXIT_OK


def cmd_blowup(cfg: RunConfig, out: Path) -> int:
    if len(cfg.gaps) < 4:
        raise ConfigError("sweep requires >= 4 gaps")
    modes = [int(m) for m in cfg.task.get("modes", range(1, 13))]
    probes = cfg.task.get("probes")
    if probes is not None:
        probes = {int(k): list(v) for k, v in probes.items()}
    base = cfg.dimer(cfg.gaps[0])
    sw = blowup_sweep(base, cfg.medium, cfg.contrasts.eta, modes, cfg.gaps, probes)
    write_csv(out / "blowup_sweep.csv", cfg, ["epsilon", "mode", "probe", "grad_norm", "predicted", "fitted"],
              sw.rows())
    frows = [(f.mode, f.probe, f.slope, f.predicted, f.residual, int(f.log_corrected))
             for _, f in sorted(sw.fits.items())]
    write_csv(out / "exponents.csv", cfg, ["mode", "probe", "slope", "predicted", "residual", "log_corrected"], frows)
    errs = [(e, m, p, msg) for (e, m, p), msg in sorted(sw.probe_failures.items())]
    errs += [(e, "", "", msg) for e, msg in sorted(sw.failures.items())]
    write_csv(out / "blowup_errors.csv", cfg, ["epsilon", "mode", "probe", "error"], errs)
    for f in frows:
        print(f"mode {f[0]:2d} {f[1]:8s} slope {f[2]:+.3f} (predicted {PREDICTED_EXPONENT.get(f[0], float('nan')):+.2f})")
    return EXIT_NUMERICAL if sw.failures and not sw.fits else EXIT_OK


def cmd_scatter(cfg: RunConfig, out: Path) -> int:
    g = cfg.gaps[0]
    cap = compute_capacity(cfg.dimer(g), cfg.medium, keep_solver=True)
    spec = generalized_spectrum(cap.E, cap.B, cfg.medium, cfg.contrasts.eta)
    t = cfg.task
    w = t.get("wave", {}) or {}
    try:
        wave = incident_plane_wave(cfg.medium, w.get("kind", "p"), w.get("direction", (0.0, 0.0, 1.0)),
                                   w.get("polarization"), omega=1.0, amplitude=complex(w.get("amplitude", 1.0)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if "omegas" in t:
        grid = [float(x) for x in t["omegas"]]
    else:
        center = spec.mode(int(t.get("around_mode", 1))).omega
        span = float(t.get("span", 0.2))
        n = int(t.get("points", 12))
        grid = list(center * np.linspace(1 - span, 1 + span, n))
    rows = resonance_scan(wave, spec, cap, cap.solver, cfg.contrasts, grid, method=t.get("method", "closed"))
    header = ["omega"] + [f"abs_b{i}" for i in range(1, 13)] + ["gap_u", "gap_grad", "far_u", "flags"]
    data = []
    for r in rows:
        b = ["flagged" if i in r.flags else abs(r.b[i - 1]) for i in range(1, 13)]
        data.append([r.omega] + b + [r.gap_amplitude, r.gap_gradient, r.far_amplitude,
                                     ";".join(f"b{i}" for i in sorted(r.flags))])
    write_csv(out / "scatter_scan.csv", cfg, header, data)
    print(f"scatter: {len(rows)} frequencies, {sum(bool(r.flags) for r in rows)} flagged")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, out: Path) -> int:
    g = cfg.gaps[0]
    cap = compute_capacity(cfg.dimer(g), cfg.medium)
    t = cfg.task
    entries = [tuple(e) for e in t.get("entries", [(1, 1), (1, 7), (4, 4)])]
    idx = sorted({i - 1 for e in entries for i in e})
    mfs = MFSConfig(**(t.get("mfs", {}) or {}))
    E_or, worst = oracle_energy_matrix(cap.geometry, cfg.medium, idx, mfs)
    reliable = worst <= mfs.residual_threshold
    tol = float(t.get("tolerance", 0.05))
    rows = []
    for i, j in entries:
        bem = cap.E[i - 1, j - 1]
        orc = E_or[idx.index(i - 1), idx.index(j - 1)]
        rel = abs(bem - orc) / abs(orc)
        rows.append((i, j, bem, orc, rel, "pass" if rel <= tol else "fail", "yes" if reliable else "no"))
    write_csv(out / "validate_energy.csv", cfg, ["i", "j", "bem", "oracle", "rel_diff", "status", "oracle_reliable"],
              rows)
    rep = check_structure(cap.B, cap.E, gap=g, radius=cfg.radius)
    write_csv(out / "validate_structure.csv", cfg, ["check", "status", "value"],
              [(k, "pass" if v else "fail", rep.values.get(k, float("nan"))) for k, v in sorted(rep.checks.items())])
    for r in rows:
        print(f"E[{r[0]},{r[1]}] bem {r[2]:.5g} oracle {r[3]:.5g} rel {r[4]:.2e} {r[5]}"
              + ("" if reliable else " (oracle unreliable)"))
    print("structure: " + ("pass" if rep.passed else "fail"))
    ok = all(r[5] == "pass" for r in rows) and rep.passed
    return EXIT_OK if ok else EXIT_NUMERICAL


COMMANDS = {"mesh": cmd_mesh, "spectrum": cmd_spectrum, "blowup": cmd_blowup, "scatter": cmd_scatter,
            "validate": cmd_validate}


def _set_threads(n: Optional[int]) -> None:
    if not n:
        return
    import numba
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elastic-dimer", description="Elastic dimer resonance pipelines.")
    p.add_argument("command", choices=TASKS)
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        out = Path(args.out or cfg.out_dir or "out")
        out.mkdir(parents=True, exist_ok=True)
        _set_threads(args.threads)
        np.random.seed(cfg.seed)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # invalid physical inputs surfacing from the library
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
