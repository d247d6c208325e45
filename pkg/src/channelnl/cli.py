"""Command-line front end.

Exit codes: 0 success, 1 a verification check failed, 2 bad input or
arguments, 3 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import (SIGMA_Z, ChoiMatrix, choi_from_unitary, decoherent_action, dephase, is_unitary,
                   load_choi, load_matrix, random_choi, relative_entropy_matrix, trace_norm)
from .hierarchy import SetSpec, membership
from .polytope import (SolverFailure, bell_value, chsh, load_csv, nu_1, nu_diamond, nu_relent, pr_box,
                       relative_entropy)
from .tasks import (DEFAULT_P, DEFAULT_TOL, PANELS, CodeInstance, InterconversionInstance, assisted_fidelity,
                    channel_distance, decohered_distance, gamma, interconversion_fidelity, mu_grid, omega, sweep,
                    unitary_n1_bounds)

log = logging.getLogger("channelnl")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3
MEASURES = ("nu1", "nudiamond", "nurelent", "n1-bounds")
SUITES = ("prop1", "prop3", "hierarchy-sanity")
DEMOS = ("prop3", "lose", "classical")
DEFAULT_SEED = 7
DEFAULT_SET = "losr1+lda"
CHECK_TOL = 1e-5


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    choi: str | None = None
    dist: str | None = None
    which: str = "nu1"
    sets: list = field(default_factory=list)
    panel: str | None = None
    mu: tuple | None = None  # (start, stop, step)
    p: float = DEFAULT_P
    level: int = 1
    npa_level: str = "2"
    seed: int = DEFAULT_SEED
    tol: float = DEFAULT_TOL
    out: str | None = None
    workers: int = 1
    timing: bool = False
    suite: str = "all"
    demo: str = "prop3"
    assemblage: str | None = None
    state: str | None = None
    restarts: int = 6
    K: int = 2

    def validate(self) -> "RunConfig":
        if self.tol <= 0 or self.tol >= 1:
            raise UsageError("--tol must lie in (0, 1)")
        if not 0.0 <= self.p <= 1.0:
            raise UsageError("--p must lie in [0, 1]")
        if self.level < 1:
            raise UsageError("--level must be >= 1")
        if self.npa_level not in ("1", "1ab", "2", "3"):
            raise UsageError("--npa-level must be one of 1, 1ab, 2, 3")
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")
        for s in self.sets:
            SetSpec.parse(s)
        if self.mu is not None:
            start, stop, step = self.mu
            if not (0.0 <= start <= stop <= 1.0):
                raise UsageError("--mu values must satisfy 0 <= start <= stop <= 1")
            mu_grid(start, stop, step)
        if self.command == "measure":
            if (self.choi is None) == (self.dist is None):
                raise UsageError("measure needs exactly one of --choi or --dist")
            if self.dist is not None and self.which == "n1-bounds":
                raise UsageError("n1-bounds needs a Choi matrix input")
        return self


def parse_mu(text: str) -> tuple:
    """'0.7' or 'start:stop:step'."""
    parts = text.split(":")
    try:
        vals = [float(v) for v in parts]
    except ValueError:
        raise UsageError(f"cannot parse --mu {text!r}") from None
    if len(vals) == 1:
        return (vals[0], vals[0], 1.0)
    if len(vals) != 3:
        raise UsageError("--mu takes a value or start:stop:step")
    return tuple(vals)


def _emit(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=1, sort_keys=True, default=_json_default)
    print(text)
    if out:
        Path(out).write_text(text + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o).__name__)


def _finite(v: float):
    return v if v is not None and math.isfinite(v) else None


# ---------------------------------------------------------------------------
# measure
# ---------------------------------------------------------------------------


def _distribution_measure(s, which: str, tol: float) -> dict:
    fn = {"nu1": nu_1, "nudiamond": nu_diamond, "nurelent": nu_relent}[which]
    val, rep = fn(s, tol=min(tol, 1e-9), return_report=True)
    return {"measure": which, "value": float(val), "status": rep.status}


def _unitary_from_choi(j: ChoiMatrix) -> np.ndarray | None:
    w, v = np.linalg.eigh((j.matrix + j.matrix.conj().T) / 2)
    if w[-1] < 1e-9 or np.sum(w > 1e-9 * w[-1]) != 1 or j.d_in != j.d_out:
        return None
    vec = v[:, -1] * math.sqrt(w[-1])
    u = vec.reshape(j.d_in, j.d_out).T
    return u if is_unitary(u, 1e-7) else None


def cmd_measure(cfg: RunConfig) -> int:
    spec = cfg.sets[0] if cfg.sets else DEFAULT_SET
    if cfg.dist is not None:
        s = load_csv(cfg.dist)
        doc = {"input": cfg.dist, "distribution": s.matrix.tolist()}
        doc.update(_distribution_measure(s, cfg.which, cfg.tol))
        _emit(doc, cfg.out)
        return EXIT_OK
    j = load_choi(cfg.choi)
    if not j.is_cptp(1e-7):
        raise UsageError("input Choi matrix is not CPTP")
    s = decoherent_action(j)
    doc = {"input": cfg.choi, "decoherent_action": s.matrix.tolist(), "set": spec}
    if cfg.which in ("nu1", "nudiamond", "nurelent"):
        doc.update(_distribution_measure(s, cfg.which, cfg.tol))
    if cfg.which == "nu1":
        # both sides of the decoherence relation for the trace distance
        dec = decohered_distance(j, spec, tol=cfg.tol)
        full = channel_distance(j, spec, tol=cfg.tol)
        doc["decohered_distance"] = {"value": dec.value, "status": dec.status}
        doc["channel_lower_bound"] = {"value": full.value, "status": full.status}
        doc["bound_ge_nu1"] = bool(full.value >= doc["value"] - CHECK_TOL)
    elif cfg.which == "n1-bounds":
        doc["nu1"] = nu_1(s)
        u = _unitary_from_choi(j)
        if u is not None:
            b = unitary_n1_bounds(u, spec, tol=cfg.tol,
                                  seesaw_kw={"K": cfg.K, "restarts": cfg.restarts, "seed": cfg.seed})
            doc.update({"lower": b.lower, "upper": _finite(b.upper), "direct": b.direct,
                        "fidelity_outer": b.fidelity_outer, "fidelity_inner": _finite(b.fidelity_inner),
                        "status": b.status})
        else:
            full = channel_distance(j, spec, tol=cfg.tol)
            doc.update({"lower": full.value, "upper": None, "direct": full.value, "status": full.status})
    _emit(doc, cfg.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# figure
# ---------------------------------------------------------------------------


def panel_sets(panel: str, level: int = 1, npa_level: str = "2") -> list[str]:
    """Default sets of a panel with the requested hierarchy and NPA levels."""
    out = []
    for s in PANELS[panel][2]:
        spec = SetSpec.parse(s)
        kw = asdict(spec)
        if spec.losr:
            kw["losr"] = level
        if spec.npa:
            kw["npa"] = npa_level
        out.append(str(SetSpec(**kw)))
    return out


def cmd_figure(cfg: RunConfig) -> int:
    task, grid, _ = PANELS[cfg.panel]
    start, stop, step = cfg.mu if cfg.mu is not None else grid
    mus = mu_grid(start, stop, step)
    sets = cfg.sets or panel_sets(cfg.panel, cfg.level, cfg.npa_level)
    out = cfg.out or f"panel_{cfg.panel}.csv"
    meta = {"panel": cfg.panel, "grid": [start, stop, step], "level": cfg.level, "npa_level": cfg.npa_level,
            "seed": cfg.seed}
    res = sweep(task, mus, sets, out=out, p=cfg.p, tol=cfg.tol, workers=cfg.workers, record_time=cfg.timing,
                meta=meta)
    bad = [r for r in res.rows if r.status not in ("optimal", "inaccurate")]
    inacc = sum(r.status == "inaccurate" for r in res.rows)
    print(f"panel {cfg.panel}: {len(res.rows)} rows -> {out} ({len(bad)} failed, {inacc} inaccurate)")
    for mu, row in res.table().items():
        print(f"  mu={mu:<6g} " + "  ".join(f"{k}={v:.6f}" for k, v in row.items()))
    return EXIT_SOLVER if len(bad) == len(res.rows) else EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool | None  # None: skipped because a solve was inaccurate
    detail: dict = field(default_factory=dict)


def _check(name: str, cond: bool, statuses=(), **detail) -> Check:
    if any(s == "inaccurate" for s in statuses):
        return Check(name, None, dict(detail, note="inaccurate solve, excluded"))
    return Check(name, bool(cond), detail)


def coherent_example(theta: float = math.pi / 8) -> np.ndarray:
    """exp(i theta Z (x) Z): diagonal, hence classically trivial, yet coherent."""
    zz = np.kron(SIGMA_Z, SIGMA_Z)
    return np.diag(np.exp(1j * theta * np.diag(zz).real))


def suite_prop1(seed: int = DEFAULT_SEED, n_channels: int = 5, n_pairs: int = 20, spec: str = DEFAULT_SET,
                tol: float = DEFAULT_TOL) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_channels):
        j = random_choi(rng=rng)
        nu = nu_1(decoherent_action(j))
        dec = decohered_distance(j, spec, tol=tol)
        out.append(_check(f"decohered_equality[{k}]", abs(dec.value - nu) <= CHECK_TOL, [dec.status],
                          nu1=nu, distance=dec.value))
        full = channel_distance(j, spec, tol=tol)
        out.append(_check(f"coherent_bound[{k}]", full.value >= nu - CHECK_TOL, [full.status],
                          nu1=nu, bound=full.value))
    j = choi_from_unitary(coherent_example())
    nu = nu_1(decoherent_action(j))
    full = channel_distance(j, spec, tol=tol)
    out.append(_check("strict_coherent_example", full.value > nu + 1e-3, [full.status], nu1=nu, bound=full.value))
    worst_tn = worst_re = 0.0
    for _ in range(n_pairs):
        a, b = random_choi(rng=rng), random_choi(rng=rng)
        sa, sb = decoherent_action(a), decoherent_action(b)
        worst_tn = max(worst_tn, abs(trace_norm(dephase(a).matrix - dephase(b).matrix)
                                     - np.abs(sa.matrix - sb.matrix).sum()))
        worst_re = max(worst_re, abs(relative_entropy_matrix(dephase(a).matrix, dephase(b).matrix)
                                     - relative_entropy(sa.matrix, sb.matrix)))
    out.append(_check("trace_norm_reduction", worst_tn <= 1e-9, worst=worst_tn))
    out.append(_check("relative_entropy_reduction", worst_re <= 1e-9, worst=worst_re))
    return out


def suite_prop3(seed: int = DEFAULT_SEED, n_models: int = 100, n_lose: int = 5) -> list[Check]:
    from .stochsim import (ClassicalLosrModel, classical_losr_matrix, lose_channel, lose_decoherent_action,
                           needs_communication, prop3_demo, random_lose_instance)

    rep = prop3_demo()
    out = [
        _check("tsirelson_chsh", abs(rep.chsh - 2 * math.sqrt(2)) <= 1e-9, chsh=rep.chsh),
        _check("tsirelson_nonlocal", not rep.local, lp_status=rep.lp_status, distance=rep.distance),
    ]
    rng = np.random.default_rng(seed)
    locals_ = [not needs_communication(classical_losr_matrix(ClassicalLosrModel.random(rng)))
               for _ in range(n_models)]
    out.append(_check("classical_models_local", all(locals_), local=sum(locals_), total=n_models))
    worst = 0.0
    for _ in range(n_lose):
        tau, m = random_lose_instance(rng)
        worst = max(worst, float(np.abs(decoherent_action(lose_channel(tau, m)).matrix
                                        - lose_decoherent_action(tau, m).matrix).max()))
    out.append(_check("kraus_path_agrees", worst <= 1e-9, worst=worst))
    return out


def suite_hierarchy(seed: int = DEFAULT_SEED, tol: float = DEFAULT_TOL) -> list[Check]:
    from .seesaw import seesaw_optimize

    out = []
    om1 = omega(1.0)
    anchors = {"cptp+lda": 2.0, "cptp+nsda": 4.0, "cptp+npa1": 2 * math.sqrt(2)}
    for spec, want in anchors.items():
        r = gamma(om1, spec, tol=tol, full=True)
        out.append(_check(f"anchor[{spec}]", abs(r.value - want) <= 1e-4, [r.status], value=r.value, expected=want))
    vals, stats = {}, []
    for spec in ("losr1+lda", "losr1+npa2", "losr1+nsda", "qns", "cptp"):
        r = gamma(0.75, spec, tol=tol, full=True)
        vals[spec] = r.value
        stats.append(r.status)
    v = list(vals.values())
    out.append(_check("gamma_ordering[mu=0.75]", all(a <= b + 1e-6 for a, b in zip(v, v[1:])), stats, **vals))
    pr = np.diag(pr_box().vec())
    feas = membership(pr, "losr1", tol=tol)
    infeas = membership(pr, "losr1+lda", tol=tol)
    out.append(_check("prbox_in_losr1", feas.status == "optimal", status=feas.status))
    out.append(_check("prbox_not_in_losr1_lda", infeas.status == "infeasible", status=infeas.status))
    inst = InterconversionInstance(0.7)
    f = {s: interconversion_fidelity(inst, s, tol=tol, full=True) for s in ("losr1+lda", "sep3", "cptp")}
    fv = [r.value for r in f.values()]
    out.append(_check("interconversion_ordering[mu=0.7]", fv[0] <= fv[1] + 1e-6 and fv[1] <= fv[2] + 1e-6,
                      [r.status for r in f.values()], **{k: r.value for k, r in f.items()}))
    c = assisted_fidelity(CodeInstance(0.5, "cptpp"), tol=tol, full=True)
    out.append(_check("codes_cptpp_unit[mu=0.5]", abs(c.value - 1) <= 1e-7, [c.status], value=c.value))
    c = assisted_fidelity(CodeInstance(0.5, "super1way+losr1"), tol=tol, full=True)
    out.append(_check("codes_losr_unassisted[mu=0.5]", abs(c.value - CodeInstance(0.5).unassisted()) <= 1e-6,
                      [c.status], value=c.value))
    ss = seesaw_optimize(om1.matrix, K=4, restarts=4, seed=seed)
    outer = gamma(om1, "losr1", tol=tol)
    out.append(_check("seesaw_sandwich", 2 - 1e-4 <= ss.value <= outer + 1e-6 and ss.monotone(),
                      inner=ss.value, outer=outer))
    return out


def run_suite(name: str, cfg: RunConfig) -> list[Check]:
    if name == "prop1":
        return suite_prop1(cfg.seed, tol=cfg.tol)
    if name == "prop3":
        return suite_prop3(cfg.seed)
    return suite_hierarchy(cfg.seed, tol=cfg.tol)


def cmd_verify(cfg: RunConfig) -> int:
    names = SUITES if cfg.suite == "all" else (cfg.suite,)
    report, ok = {}, True
    for name in names:
        t0 = time.perf_counter()
        checks = run_suite(name, cfg)
        passed = all(c.passed is not False for c in checks)
        ok &= passed
        report[name] = {"passed": passed, "seconds": round(time.perf_counter() - t0, 2),
                        "checks": [asdict(c) for c in checks]}
        for c in checks:
            tag = {True: "PASS", False: "FAIL", None: "SKIP"}[c.passed]
            print(f"[{tag}] {name}: {c.name}", file=sys.stderr)
    _emit({"passed": ok, "suites": report}, cfg.out)
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig) -> int:
    from .stochsim import (ClassicalLosrModel, classical_losr_matrix, load_assemblage, lose_decoherent_action,
                           needs_communication, phi_plus, prop3_demo, tsirelson_assemblage)

    if cfg.demo == "prop3":
        _emit(prop3_demo().to_json(), cfg.out)
        return EXIT_OK
    if cfg.demo == "lose":
        m = load_assemblage(cfg.assemblage) if cfg.assemblage else tsirelson_assemblage()
        tau = load_matrix(cfg.state)[0] if cfg.state else phi_plus()
        s = lose_decoherent_action(tau, m)
    else:
        model = ClassicalLosrModel.random(np.random.default_rng(cfg.seed))
        s = classical_losr_matrix(model)
    doc = {"demo": cfg.demo, "distribution": s.matrix.tolist(), "needs_communication": needs_communication(s)}
    if s.scenario == (2, 2, 2, 2):
        doc["chsh"] = bell_value(s, chsh())
    _emit(doc, cfg.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--set", dest="sets", action="append", default=[],
                        help="set spec such as losr1+lda; repeat or separate with commas")
    common.add_argument("--mu", help="value or start:stop:step")
    common.add_argument("--p", type=float, default=DEFAULT_P, help="mixing of the interconversion input state")
    common.add_argument("--level", type=int, default=1, help="LOSR hierarchy level")
    common.add_argument("--npa-level", default="2", help="NPA level: 1, 1ab, 2 or 3")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--tol", type=float, default=DEFAULT_TOL, help="solver tolerance")
    common.add_argument("--out", help="output path")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="channelnl", description="Nonlocality of bipartite channels.")
    sub = ap.add_subparsers(dest="command", required=True)
    m = sub.add_parser("measure", parents=[common], help="measures of a distribution or a channel")
    m.add_argument("--choi", help="Choi matrix JSON")
    m.add_argument("--dist", help="distribution CSV with header a,b,x,y,p")
    m.add_argument("--which", choices=MEASURES, default="nu1")
    m.add_argument("--restarts", type=int, default=6, help="seesaw restarts for n1-bounds")
    m.add_argument("-K", type=int, default=2, help="shared randomness values for n1-bounds")
    f = sub.add_parser("figure", parents=[common], help="sweep one panel over mu")
    f.add_argument("panel", choices=sorted(PANELS))
    f.add_argument("--workers", type=int, default=1)
    f.add_argument("--timing", action="store_true", help="write wall times into the CSV")
    v = sub.add_parser("verify", parents=[common], help="run a verification suite")
    v.add_argument("suite", nargs="?", choices=SUITES + ("all",), default="all")
    s = sub.add_parser("simulate", parents=[common], help="stochastic-simulation demos")
    s.add_argument("demo", nargs="?", choices=DEMOS, default="prop3")
    s.add_argument("--assemblage", help="measurement assemblage JSON")
    s.add_argument("--state", help="shared state JSON (matrix format)")
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    sets = [t.strip() for s in ns.sets for t in s.split(",") if t.strip()]
    cfg = RunConfig(command=ns.command, sets=sets, mu=parse_mu(ns.mu) if ns.mu else None, p=ns.p,
                    level=ns.level, npa_level=str(ns.npa_level), seed=ns.seed, tol=ns.tol, out=ns.out)
    for key in ("choi", "dist", "which", "panel", "workers", "timing", "suite", "demo", "assemblage", "state",
                "restarts", "K"):
        if hasattr(ns, key):
            setattr(cfg, key, getattr(ns, key))
    return cfg.validate()


COMMANDS = {"measure": cmd_measure, "figure": cmd_figure, "verify": cmd_verify, "simulate": cmd_simulate}


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(ns)
        return COMMANDS[cfg.command](cfg)
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (UsageError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
