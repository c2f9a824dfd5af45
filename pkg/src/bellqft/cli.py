"""Command-line frontend: simulate, verify, rates-dump, model-info.

A run is described by one JSON config file; command-line flags override
its fields.  Exit codes: 0 success or pass, 1 error or failed check, 2 for
simulations that completed with flagged (escaped or truncated) trajectories.
"""
from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import engine, models, rates
from .fock import SmearingProfile, load_site_values
from .gamma_process import gamma_equivalence_check
from .hilbert import HilbertError, StateVector, random_hermitian

SUITES = ("equivariance", "reversal", "minimality", "symmetry", "two-time", "gamma-equivalence")
DEFAULTS = {"params": {}, "state": {"preset": "default"}, "T": 1.0, "dt": 1e-3, "n_traj": 1000,
            "sample_times": None, "seed": 0, "output": "out", "start": None,
            "event_cap": engine.DEFAULT_EVENT_CAP}


class ConfigError(Exception):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = f"{path}:{line}: " if path and line else (f"{path}: " if path else "")
        super().__init__(where + message)


def _line_of(text, key):
    m = re.search(r'"%s"\s*:' % re.escape(key), text or "")
    return text[:m.start()].count("\n") + 1 if m else None


def load_config(path, overrides=None) -> dict:
    """Read and validate a JSON run config (a run manifest is accepted too)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("config file not found", path=str(path))
    text = path.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno, str(path)) from None
    if isinstance(raw, dict) and "run" in raw and isinstance(raw["run"], dict) and "config" in raw["run"]:
        raw = raw["run"]["config"]
        text = ""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", 1, str(path))
    cfg = {**DEFAULTS, **raw}
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    cfg["_base"] = str(path.parent)

    def bad(key, msg):
        raise ConfigError(msg, _line_of(text, key), str(path))

    if cfg.get("model") not in models.MODEL_NAMES:
        bad("model", f"model must be one of {', '.join(models.MODEL_NAMES)}")
    if not isinstance(cfg["params"], dict):
        bad("params", "params must be an object")
    try:
        cfg["T"] = float(cfg["T"])
        cfg["dt"] = float(cfg["dt"])
        cfg["n_traj"] = int(cfg["n_traj"])
        cfg["seed"] = int(cfg["seed"])
        cfg["event_cap"] = int(cfg["event_cap"])
    except (TypeError, ValueError):
        bad("T", "T and dt must be numbers, n_traj and seed integers")
    if cfg["dt"] <= 0:
        bad("dt", "dt must be positive")
    if cfg["T"] < 0:
        bad("T", "T must be nonnegative")
    if abs(round(cfg["T"] / cfg["dt"]) * cfg["dt"] - cfg["T"]) > 1e-9 * max(1.0, cfg["T"]):
        bad("T", "T must be a whole number of steps dt")
    if cfg["event_cap"] < 2:
        bad("event_cap", "event_cap must be at least 2")
    if cfg["n_traj"] < 0:
        bad("n_traj", "n_traj must be nonnegative")
    st = cfg["state"]
    if not isinstance(st, dict) or not ({"preset", "file"} & set(st)):
        bad("state", "state needs a 'preset' name or an amplitude 'file'")
    if cfg["sample_times"] is not None:
        times = [float(t) for t in cfg["sample_times"]]
        if any(t < 0 or t > cfg["T"] + 1e-12 for t in times):
            bad("sample_times", "sample times must lie in [0, T]")
        cfg["sample_times"] = times
    for key in ("phi_file", "potential_file"):
        if key in cfg["params"]:
            f = _resolve(cfg, cfg["params"][key])
            if not f.exists():
                bad(key, f"file not found: {f}")
    if "file" in st and not _resolve(cfg, st["file"]).exists():
        bad("file", f"file not found: {_resolve(cfg, st['file'])}")
    return cfg


def _resolve(cfg, name):
    p = Path(name)
    return p if p.is_absolute() or p.exists() else Path(cfg["_base"]) / p


def public_config(cfg):
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def build_model(cfg) -> models.BellModel:
    params = dict(cfg["params"])
    if "phi_file" in params:
        params["phi"] = SmearingProfile.from_csv(_resolve(cfg, params.pop("phi_file")))
    if "potential_file" in params:
        params["potential"] = load_site_values(_resolve(cfg, params.pop("potential_file")),
                                               params.get("sites", 32))
    return models.preset_model(cfg["model"], **params)


def read_state_file(path, dim=None) -> np.ndarray:
    """Amplitudes from JSON ([[re, im], ...] or [re, ...]) or CSV rows 're,im'."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"state file not found: {path}")
    text = path.read_text().strip()
    if text.startswith("["):
        data = json.loads(text)
        amps = np.array([complex(*z) if isinstance(z, (list, tuple)) else complex(z) for z in data])
    else:
        vals = []
        for row in csv.reader(text.splitlines()):
            try:
                vals.append(complex(float(row[0]), float(row[1]) if len(row) > 1 else 0.0))
            except (ValueError, IndexError):
                continue
        amps = np.array(vals, dtype=complex)
    if dim is not None and amps.size != dim:
        raise HilbertError(f"state file {path} has {amps.size} amplitudes, model dimension is {dim}")
    return amps


def build_state(cfg, model) -> StateVector:
    st = dict(cfg["state"])
    if "file" in st:
        return StateVector.normalized(read_state_file(_resolve(cfg, st["file"]), model.dim))
    name = st.pop("preset")
    return models.preset_state(model, name, **st)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg, workers=None, figures=False) -> int:
    if cfg["n_traj"] < 1:
        raise ConfigError("n_traj must be at least 1 for simulate")
    model = build_model(cfg)
    psi = build_state(cfg, model)
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    q0 = None
    if cfg.get("start"):
        from .fock import Configuration
        q0 = model.space.cell_of(Configuration.decode(cfg["start"]))
    times = cfg["sample_times"] or list(np.linspace(0, cfg["T"], 5))
    rep, trajs, _ = engine.run_ensemble(model, psi, cfg["T"], cfg["dt"], cfg["n_traj"], cfg["seed"], q0, times,
                                        workers, event_cap=cfg["event_cap"], return_trajectories=True)
    engine.write_trajectories(out / "trajectories.jsonl", trajs, model.space.cell_labels)
    rep.write_csv(out / "report.csv")
    rep.write_distributions_csv(out / "distributions.csv")
    (out / "summary.json").write_text(json.dumps(rep.summary(), indent=2, sort_keys=True,
                                                 default=engine._json_default) + "\n")
    engine.write_manifest(out / "manifest.json", model,
                          {"command": "simulate", "config": public_config(cfg),
                           "seeds": [cfg["seed"], cfg["seed"] + cfg["n_traj"] - 1]},
                          {"outputs": {"trajectories.jsonl": engine.file_hash(out / "trajectories.jsonl")}})
    if figures:
        from . import plotting
        plotting.plot_tv(rep, out / "tv.png")
        plotting.plot_distributions(rep, out / "distributions.png")
    print(json.dumps({"max_tv": rep.max_tv, "within_3sigma": rep.within_bound,
                      "flagged_fraction": rep.flagged_fraction, "output": str(out)}))
    return 2 if rep.flagged_fraction > 0 else 0


def _verify(cfg, suite, workers=None, figures=False):
    if suite == "gamma-equivalence":
        rng = np.random.default_rng(cfg["seed"])
        n = int(cfg.get("n_random", 20))
        dim = int(cfg.get("h1_dim", 4))
        trunc = int(cfg.get("truncation", 3))
        reps = []
        for i in range(n):
            stat = ("bose", "fermi")[i % 2]
            reps.append(gamma_equivalence_check(random_hermitian(dim, rng), stat, trunc, rng=rng).to_dict())
        return all(r["passed"] for r in reps), {"draws": reps}
    model = build_model(cfg)
    psi = build_state(cfg, model)
    H = model.hamiltonian(0.0)
    hbar = model.constants.hbar
    if suite == "equivariance":
        res = engine.evolve_master(model.P.probabilities(psi.amplitudes), model, psi, cfg["T"], cfg["dt"])
        out = {"master": res.summary(), "tol": 1e-8}
        ok = res.residual <= 1e-8 and res.stable
        if figures:
            from . import plotting
            plotting.plot_master(res, Path(cfg["output"]) / "master_residual.png")
        if cfg["n_traj"] > 0:
            rep = engine.equivariance_report(model, psi, cfg["T"], cfg["dt"], cfg["n_traj"], cfg["sample_times"],
                                             cfg["seed"], workers)
            out["ensemble"] = rep.summary()
            ok = ok and rep.passed
        return ok, out
    if suite == "reversal":
        r = rates.reversed_rates_check(psi.amplitudes, H, model.P, hbar=hbar)
        out = {"identity": r.to_dict()}
        ok = r.passed
        if cfg["n_traj"] > 0 and ok:
            e = engine.reversal_ensemble(model, psi, cfg["T"], cfg["dt"], cfg["n_traj"], cfg["seed"],
                                         workers=workers)
            out["ensemble"] = e.to_dict()
            ok = ok and e.passed
        return ok, out
    if suite == "minimality":
        prob = model.P.probabilities(psi.amplitudes)
        J = rates.current_matrix(psi.amplitudes, H, model.P, hbar)
        sigma = rates.minimal_rates(psi.amplitudes, H, model.P, hbar)
        family = "minimal"
        if cfg.get("augment"):
            sigma = rates.augment_symmetric(sigma, prob, float(cfg["augment"]))
            family = f"symmetric-augmented (c={cfg['augment']})"
        rep = rates.check_standard_current(sigma, prob, J)
        ok = rep.passed and rep.equality_ok
        return ok, {"family": family, **rep.to_dict()}
    if suite == "symmetry":
        rep = engine.translation_symmetry_check(model, int(cfg.get("shift", 1)), psi)
        return rep.passed, rep.to_dict()
    if suite == "two-time":
        rep = rates.two_time_check(psi.amplitudes, H, model.P, float(cfg.get("two_time_dt", 1e-4)), hbar)
        return rep.passed, rep.to_dict()
    raise ConfigError(f"unknown suite {suite!r}")


def cmd_verify(cfg, suite, workers=None, figures=False) -> int:
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    ok, report = _verify(cfg, suite, workers, figures)
    report = {"suite": suite, "passed": bool(ok), **report}
    (out / f"verify_{suite}.json").write_text(json.dumps(report, indent=2, sort_keys=True,
                                                         default=engine._json_default) + "\n")
    print(f"{suite}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def rate_table_for(model, psi, term="full"):
    if term == "full":
        H = model.hamiltonian(0.0)
    elif term == "free":
        H = model.H0
    elif term == "interaction":
        H = model.interaction(0.0)
        if H is None:
            raise ConfigError("model has no interaction term")
    else:
        raise ConfigError(f"unknown term {term!r}")
    return H, rates.minimal_rates(psi, H, model.P, model.constants.hbar)


def cmd_rates_dump(cfg, state_file=None, term="full", time=0.0) -> int:
    model = build_model(cfg)
    if state_file:
        psi = StateVector.normalized(read_state_file(state_file, model.dim))
    else:
        psi = build_state(cfg, model)
    if time:
        full, _ = engine.state_schedule(model, psi, time, cfg["dt"])
        psi = StateVector(full[-1], time=time)
    H, tab = rate_table_for(model, psi, term)
    J = rates.current_matrix(psi, H, model.P, model.constants.hbar)
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    labels = model.space.cell_labels
    with open(out / "rates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "destination", "rate", "class"])
        for src, dst, r in tab.triples():
            w.writerow([labels[src].encode(), labels[dst].encode(), f"{r:.17g}",
                        models.classify_jump(model, labels[src], labels[dst])])
    coo = J.entries.tocoo()
    with open(out / "current.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["destination", "source", "current"])
        for q, qp, v in sorted(zip(coo.row, coo.col, coo.data)):
            if v != 0:
                w.writerow([labels[q].encode(), labels[qp].encode(), f"{v:.17g}"])
    print(f"{len(tab.triples())} rates written to {out / 'rates.csv'}")
    return 0


def cmd_model_info(cfg) -> int:
    model = build_model(cfg)
    text = json.dumps(model.manifest(), indent=2, sort_keys=True, default=engine._json_default)
    print(text)
    if cfg.get("output"):
        out = Path(cfg["output"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "model.json").write_text(text + "\n")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="bellqft", description="Bell-type jump processes on lattice QFT models")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp_):
        sp_.add_argument("config", help="JSON run config (or a run manifest)")
        sp_.add_argument("--seed", type=int)
        sp_.add_argument("--dt", type=float)
        sp_.add_argument("--T", type=float, dest="T")
        sp_.add_argument("--n-traj", type=int, dest="n_traj")
        sp_.add_argument("--output", "-o")
        sp_.add_argument("--workers", type=int, help=f"worker processes (default ${engine.WORKERS_ENV} or 1)")

    s = sub.add_parser("simulate", help="sample trajectories and compare with the Born distribution")
    common(s)
    s.add_argument("--figures", action="store_true", help="also render PNG figures next to the CSV files")
    v = sub.add_parser("verify", help="run a verification suite")
    common(v)
    v.add_argument("--suite", required=True, choices=SUITES)
    v.add_argument("--figures", action="store_true")
    r = sub.add_parser("rates-dump", help="write the rate table and current matrix for a state")
    common(r)
    r.add_argument("--state", help="amplitude file (JSON or CSV re,im)")
    r.add_argument("--term", choices=("full", "free", "interaction"), default="full")
    r.add_argument("--time", type=float, default=0.0, help="evolve the state to this time first")
    m = sub.add_parser("model-info", help="print the model manifest")
    common(m)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: getattr(args, k, None) for k in ("seed", "dt", "T", "n_traj", "output")}
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.workers, args.figures)
        if args.command == "verify":
            return cmd_verify(cfg, args.suite, args.workers, args.figures)
        if args.command == "rates-dump":
            return cmd_rates_dump(cfg, args.state, args.term, args.time)
        return cmd_model_info(cfg)
    except (ConfigError, HilbertError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
