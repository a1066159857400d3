"""Configuration-driven pipeline and command line entry point.

Stages: block (one tube, certificates, bound tables, finite-difference
cross-check), pack (full atlas, separation and coverage, assembled-metric
certificates), distances (epsilon sweep of distance brackets). Each stage
writes deterministic CSV/JSON artifacts under the output directory; the run
manifest ties them together.

    psc-limits run --config experiment.yaml --out runs/a
    psc-limits verify-block --manifold torus --epsilon 0.1 --seed 0
    psc-limits report --out runs/a
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .assembly import (assemble, build_block, check_assembled_properties, check_block_properties,
                       normalize_conformal_factor)
from .config import ExperimentConfig, as_plain, default_config, load_config
from .curvature import fd_relative_errors, oracle_sample, sectional_curvatures, tube_log_grid, verify_bound_table
from .distance import GeodesicMesh, calibrate_band, convergence_report, sample_pairs
from .errors import ConfigError, PSCError
from .geometry import FlatTorus, Sphere
from .packing import AxisGeodesicChart, GreatCircle, TubeChart, build_atlas
from .profiles import constant_factor, cosine_factor, linear_factor, tabulated_factor

logger = logging.getLogger(__name__)

STAGES = ("block", "pack", "distances")
DEFAULT_R = {"sphere": 0.005, "torus": 0.2}


def build_manifold(cfg: ExperimentConfig):
    man = cfg["manifold"]
    if man["type"] == "sphere":
        return Sphere(cfg.n)
    if man["periods"] is None:
        return FlatTorus.cube(cfg.n)
    return FlatTorus(np.asarray(man["periods"], dtype=float))


def build_factor(cfg: ExperimentConfig, manifold):
    cf = cfg["conformal_factor"]
    fam = cf["family"]
    if fam == "constant":
        return constant_factor(manifold, float(cf["value"]))
    if fam == "linear":
        return linear_factor(manifold, float(cf["a"]), float(cf["b"]), int(cf["axis"]))
    if fam == "cosine":
        return cosine_factor(manifold, float(cf["a"]), float(cf["b"]), int(cf["axis"]))
    return tabulated_factor(manifold, cf["points"], cf["values"], seed=cfg.seed)


def _write_rows(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


@dataclass
class RunManifest:
    config_hash: str
    config: dict
    out: str
    status: str = "running"
    parameters: dict = field(default_factory=dict)
    statuses: dict = field(default_factory=dict)
    informational: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    failure: Optional[dict] = None

    @property
    def passed(self) -> bool:
        return self.status == "passed"

    def add(self, path: Path) -> str:
        rel = str(Path(path).relative_to(self.out))
        if rel not in self.artifacts:
            self.artifacts.append(rel)
        return rel

    def set_status(self, name: str, ok, informational: bool = False):
        self.statuses[name] = bool(ok)
        if informational and name not in self.informational:
            self.informational.append(name)

    def param(self, epsilon: float, **kw):
        self.parameters.setdefault(repr(float(epsilon)), {}).update(as_plain(kw))

    def finalize(self):
        if self.failure is not None:
            self.status = "error"
        else:
            asserted = [v for k, v in self.statuses.items() if k not in self.informational]
            self.status = "passed" if all(asserted) else "failed"
        missing = [a for a in self.artifacts if not (Path(self.out) / a).exists()]
        if missing:
            raise PSCError(f"manifest references missing artifacts: {missing}")
        return self

    def to_jsonable(self):
        return as_plain(dict(self.__dict__))

    def comparable(self):
        """Everything except wall-clock timings, for run-to-run equality."""
        d = self.to_jsonable()
        d.pop("timings")
        return d

    def write(self):
        path = Path(self.out) / "manifest.json"
        path.write_text(json.dumps(self.to_jsonable(), indent=2, sort_keys=True))
        return path


# ---------------------------------------------------------------------------
# stages


def reference_chart(manifold):
    """Core curve used for single-block verification."""
    if isinstance(manifold, Sphere):
        e = np.eye(manifold.n + 1)
        return TubeChart(GreatCircle(e[0], e[1]))
    return AxisGeodesicChart(manifold, np.zeros(manifold.n), 0)


def scalar_profile_rows(block, epsilon: float, n_r: int, n_s: int):
    """(epsilon, zone, log_r, r, min over s of the scalar curvature) along the tube."""
    lr = tube_log_grid(block.warp.layout, n_r)
    s = np.linspace(0.0, block.chart.length, n_s, endpoint=False)
    LR, S = np.meshgrid(lr, s, indexing="ij")
    rep = sectional_curvatures(block.ansatz, log_r=LR, s=S, f0=np.broadcast_to(block.f0(s), LR.shape))
    with np.errstate(under="ignore"):
        r = np.exp(lr)
    mins = rep.scalar.min(axis=1)
    return [(epsilon, int(z), float(a), float(b), float(m)) for z, a, b, m in zip(rep.zone[:, 0], lr, r, mins)]


def stage_block(cfg, manifest, manifold, f, out: Path):
    blk = cfg["block"]
    tol = cfg["tolerances"]
    norm = normalize_conformal_factor(f)
    chart = reference_chart(manifold)
    R0 = blk["R"] if blk["R"] is not None else DEFAULT_R[cfg.manifold_type]
    tables = ("1", "2") if cfg.manifold_type == "sphere" else ("3",)
    profile = []
    fd_rows = []
    for k, eps in enumerate(cfg.epsilons):
        tag = f"eps{k}"
        block = build_block(chart, norm.factor, eps, R0, seed=cfg.seed)
        layout = block.warp.layout
        manifest.param(eps, R=block.R, delta=block.delta, log_epsilon0=layout.log_epsilon0,
                       hat_alpha=block.hat_alpha, delta_halvings=block.delta_cert.halvings,
                       scalar_floor=0.0 if cfg.manifold_type == "sphere" else -eps)
        cert = check_block_properties(block, n_r=blk["n_r"], n_s=blk["n_s"], n_points=blk["points"],
                                      seed=cfg.seed)
        manifest.add(cert.write_json(out / f"block_certificate_{tag}.json"))
        manifest.add(cert.write_csv(out / f"block_certificate_{tag}.csv"))
        for name, part in cert.parts.items():
            manifest.set_status(f"block.{tag}.{name}", part.passed)
        for t in tables:
            res = verify_bound_table(block.ansatz, t, n_r=blk["n_r"], n_s=blk["n_s"])
            manifest.add(res.write_csv(out / f"bound_table{t}_{tag}.csv"))
            manifest.set_status(f"block.{tag}.table{t}", res.passed)
            manifest.set_status(f"block.{tag}.table{t}_strict_rows", res.strict_rows_ok)
        profile += scalar_profile_rows(block, eps, blk["n_r"], min(blk["n_s"], 64))

        rng = np.random.default_rng(cfg.seed)
        lr, s = oracle_sample(layout, blk["fd_points"], rng, length=block.chart.length)
        err = fd_relative_errors(block.ansatz, lr, s, rng, step=blk["fd_step"])
        near = np.log(rng.uniform(1e-3, 0.1, max(1, blk["fd_points"] // 4)))
        err_model = fd_relative_errors(block.ansatz.near_axis_model(), near,
                                       rng.uniform(0, block.chart.length, len(near)), rng, step=blk["fd_step"])
        fd_rows.append((eps, len(err), float(err.max()), len(err_model), float(err_model.max())))
        manifest.set_status(f"block.{tag}.fd_oracle", max(err.max(), err_model.max()) <= tol["fd_rtol"])
    manifest.add(_write_rows(out / "scalar_profile.csv", ["epsilon", "zone", "log_r", "r", "min_scalar"], profile))
    manifest.add(_write_rows(out / "fd_oracle.csv",
                             ["epsilon", "n_block", "max_rel_err_block", "n_model", "max_rel_err_model"], fd_rows))


def stage_pack(cfg, manifest, manifold, f, out: Path):
    pk = cfg["packing"]
    eta = float(pk["eta"])
    atlas = build_atlas(manifold, eta, seed=cfg.seed)
    again = build_atlas(manifold, eta, seed=cfg.seed)
    same = (np.array_equal(atlas.centers, again.centers)
            and json.dumps(atlas.to_jsonable()) == json.dumps(again.to_jsonable()))
    d = atlas.pairwise_distances()
    sep = float(d.min()) if d.size else float("inf")
    rng = np.random.default_rng(cfg.seed + 1)
    m = pk["coverage_pairs"]
    x, y = manifold.sample(rng, m), manifold.sample(rng, m)
    cov = atlas.pair_coverage(x, y, 3 * eta)
    (out / "atlas.json").write_text(json.dumps(atlas.to_jsonable(), sort_keys=True))
    manifest.add(out / "atlas.json")
    manifest.add(_write_rows(out / "packing.csv",
                             ["eta", "centers", "N", "R", "min_core_distance", "coverage_fraction", "deterministic"],
                             [(eta, len(atlas.centers), atlas.N, atlas.R, sep, float(cov.mean()), int(same))]))
    manifest.summary["atlas"] = {"eta": eta, "centers": len(atlas.centers), "N": atlas.N, "R": atlas.R,
                                 "min_core_distance": sep}
    manifest.set_status("pack.separation", sep > 2 * atlas.R)
    manifest.set_status("pack.deterministic", same)
    # axis-parallel torus lines are not built to cover every pair within 3 eta
    manifest.set_status("pack.pair_coverage", bool(cov.all()), informational=isinstance(manifold, FlatTorus))
    blk = cfg["block"]
    for k, eps in enumerate(cfg.epsilons):
        M = assemble(atlas, f, eps, seed=cfg.seed)
        cert = check_assembled_properties(M, n_points=blk["points"], n_r=100, n_s=64, per_block_points=200,
                                          seed=cfg.seed)
        manifest.param(eps, atlas_R=M.R, atlas_N=atlas.N, bilipschitz_C=M.bilipschitz_constant)
        manifest.add(cert.write_json(out / f"assembled_certificate_eps{k}.json"))
        manifest.add(cert.write_csv(out / f"assembled_certificate_eps{k}.csv"))
        for name, part in cert.parts.items():
            manifest.set_status(f"pack.eps{k}.{name}", part.passed)


def stage_distances(cfg, manifest, manifold, f, out: Path):
    ds = cfg["distances"]
    m = ds["pairs"]
    x, y = sample_pairs(manifold, m, seed=cfg.seed)
    mesh = None
    if f.constant is None:
        mesh = GeodesicMesh(manifold, f, ds["mesh_points"], ds["mesh_k"], seed=cfg.seed,
                            extra_points=np.concatenate([x, y]))
        mesh.band = calibrate_band(manifold, ds["mesh_points"], ds["mesh_k"], seed=cfg.seed + 1).scaled(
            float(np.exp(f.f_max)))
        manifest.summary["mesh"] = {**mesh.resolution(), "band": mesh.band.to_jsonable()}
    torus = isinstance(manifold, FlatTorus)
    rep = convergence_report(f, cfg.epsilons, (x, y), seed=cfg.seed, mesh=mesh, hop_factor=ds["hop_factor"],
                             cert_points=ds["certificate_points"], monotone_tol=cfg["tolerances"]["monotone"],
                             on_uncovered="direct" if torus else "error")
    manifest.add(rep.write_csv(out / "convergence.csv"))
    manifest.add(rep.write_gap_csv(out / "gap_vs_epsilon.csv"))
    manifest.add(rep.write_json(out / "convergence.json"))
    for k, r in enumerate(rep.results):
        manifest.param(r.epsilon, eta=r.eta, N=r.N, modulus_delta=r.delta, distance_R=r.R, C_fit=r.C_fit,
                       sup_gap_upper=r.sup_gap_upper, sup_gap_lower=r.sup_gap_lower)
        manifest.set_status(f"distances.eps{k}.certificate", r.certificate.passed)
    manifest.set_status("distances.brackets_consistent", rep.brackets_consistent)
    # the torus sweep uses direct hops where lines do not cover a chunk; reported only
    manifest.set_status("distances.upper_decreasing", rep.upper_decreasing, informational=torus)
    manifest.set_status("distances.lower_decreasing", rep.lower_decreasing, informational=torus)
    manifest.set_status("distances.C_stable", rep.C_stable, informational=torus)
    manifest.summary["C_ratio"] = rep.C_ratio


_STAGE_FUNCS = {"block": stage_block, "pack": stage_pack, "distances": stage_distances}


def run_experiment(cfg: ExperimentConfig, stages=STAGES, out: Optional[Path] = None) -> RunManifest:
    """Run the selected stages and write the manifest.

    A stage error stops the run; the manifest then records the stage, the
    message and the witness of a failed certificate when there is one.
    """
    out = Path(out) if out is not None else cfg.output
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.hash, cfg.data, str(out))
    (out / "config.json").write_text(json.dumps(cfg.data, indent=2, sort_keys=True))
    manifest.add(out / "config.json")
    manifold = build_manifold(cfg)
    f = build_factor(cfg, manifold)
    manifest.summary["factor"] = f.to_jsonable()
    for stage in stages:
        t0 = time.perf_counter()
        try:
            _STAGE_FUNCS[stage](cfg, manifest, manifold, f, out)
        except PSCError as exc:
            manifest.failure = {"stage": stage, "error": f"{type(exc).__name__}: {exc}",
                                "witness": as_plain(getattr(exc, "witness", None))}
            logger.error("stage %s failed: %s", stage, exc)
            break
        finally:
            manifest.timings[stage] = time.perf_counter() - t0
    manifest.finalize()
    summary_rows = summary_table(manifest)
    manifest.add(_write_rows(out / "summary.csv", ["key", "value"], summary_rows))
    manifest.write()
    return manifest


def summary_table(manifest: RunManifest):
    """Key/value rows of the human-readable summary (also written to summary.csv)."""
    rows = [("status", manifest.status), ("config_hash", manifest.config_hash)]
    for eps, params in sorted(manifest.parameters.items(), key=lambda kv: -float(kv[0])):
        for k, v in sorted(params.items()):
            rows.append((f"eps={eps}.{k}", v))
    for k, v in sorted(manifest.statuses.items()):
        tag = " (reported)" if k in manifest.informational else ""
        rows.append((f"{k}{tag}", "pass" if v else "FAIL"))
    if manifest.failure:
        rows.append(("failure", manifest.failure["error"]))
    return rows


def format_summary(manifest: dict) -> str:
    rows = []
    with (Path(manifest["out"]) / "summary.csv").open() as fh:
        rd = csv.reader(fh)
        next(rd)
        rows = list(rd)
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


# ---------------------------------------------------------------------------
# command line


def _parser():
    p = argparse.ArgumentParser(
        prog="psc-limits",
        description="Build tube metrics of positive (sphere) or almost nonnegative (torus) scalar curvature "
                    "and certify their curvature and distance properties.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "all stages"), ("verify-block", "single-tube certificates and bound tables"),
                        ("pack", "full atlas and assembled-metric certificates"),
                        ("distances", "distance brackets over the epsilon sweep"),
                        ("report", "print the summary of a finished run")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path, help="YAML experiment file (defaults when omitted)")
        sp.add_argument("--out", type=Path, help="output directory")
        if name != "report":
            sp.add_argument("--seed", type=int)
            sp.add_argument("--epsilon", type=float, action="append",
                            help="override the epsilon list (repeatable)")
            sp.add_argument("--manifold", choices=("sphere", "torus"))
    return p


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config()
    over = {"seed": args.seed, "epsilons": args.epsilon, "output": str(args.out) if args.out else None}
    if args.manifold:
        over["manifold.type"] = args.manifold
        if args.manifold == "torus" and cfg["conformal_factor"]["family"] == "linear":
            over["conformal_factor.family"] = "constant"
        if args.manifold == "torus" and not args.epsilon and not args.config:
            over["epsilons"] = [0.1, 0.05, 0.025]
    return cfg.with_overrides(**over)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            out = args.out or (load_config(args.config).output if args.config else None)
            if out is None:
                print("report needs --out or --config", file=sys.stderr)
                return 2
            manifest = json.loads((Path(out) / "manifest.json").read_text())
            print(format_summary(manifest))
            return 0 if manifest["status"] == "passed" else 1
        cfg = _config_from_args(args)
        stages = {"run": STAGES, "verify-block": ("block",), "pack": ("pack",),
                  "distances": ("distances",)}[args.command]
        manifest = run_experiment(cfg, stages)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(d, file=sys.stderr)
        return 2
    print(format_summary(manifest.to_jsonable()))
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
