"""Config-driven command line: distances, fit, compare, predict, simulate.

Every command takes a single JSON config and is a pure function of the
config, its input files, and the seed; reruns are byte-identical. The
effective configuration (defaults materialized) is written next to the
outputs so runs are self-describing.

Exit codes: 2 parse errors, 3 geometry errors, 4 sampler initialization
failures, 5 comparison mismatches, 6 unsupported predictions.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import pandas as pd

from .distances import distance_matrix, write_distance_csv
from .errors import (
    ComparisonMismatchError,
    GeometryError,
    HgpError,
    NotPositiveDefiniteError,
    ParseError,
    PredictionUnsupportedError,
    SamplerInitError,
)
from .geometry import parse_geojson
from .inference import (
    HGP_SMOOTHNESS,
    McmcSettings,
    ModelSpec,
    PriorSet,
    compare,
    fit,
    posterior_from_frame,
    predict,
    read_draws_csv,
    read_waic_csv,
    summary,
    waic,
    write_draws_csv,
    write_summary_csv,
    write_waic_csv,
)
from .inference.simulate import latent_field_draw

EXIT_PARSE = 2
EXIT_GEOMETRY = 3
EXIT_SAMPLER = 4
EXIT_COMPARE = 5
EXIT_PREDICT = 6

_EXIT_CODES = (
    (ParseError, EXIT_PARSE),
    (FileNotFoundError, EXIT_PARSE),
    (ComparisonMismatchError, EXIT_COMPARE),
    (PredictionUnsupportedError, EXIT_PREDICT),
    (SamplerInitError, EXIT_SAMPLER),
    (NotPositiveDefiniteError, EXIT_SAMPLER),
    (GeometryError, EXIT_GEOMETRY),
)

DEFAULT_CONFIG = {
    "input": {"geometry_path": None, "id_field": "id", "data_path": None},
    "model": {
        "likelihood": "poisson_offset",
        "response": None,
        "offset": None,
        "covariates": [],
        "random_effect": "hgp_exp",
        "nugget": False,
    },
    "distance": {"kind": "hausdorff", "densify": None, "n_samples": 2000},
    "priors": {},
    "mcmc": {
        "chains": 1,
        "seed": 0,
        "ess_target": 1000,
        "max_iterations": 20000,
        "burn_in": 0.5,
        "thin": 1,
        "adapt_interval": 50,
        "target_acceptance": 0.44,
    },
    "simulate": {},
    "predict": {"fit_dir": None, "new_geometry_path": None, "level": 0.95},
    "compare": {"runs": [], "labels": []},
    "output": {"dir": "."},
}


def _merge(defaults: dict, override: dict) -> dict:
    out = {}
    for key, value in defaults.items():
        if isinstance(value, dict):
            out[key] = _merge(value, override.get(key, {}) or {})
        else:
            out[key] = override.get(key, value)
    for key in override or {}:
        if key not in out:
            out[key] = override[key]
    return out


def load_config(path: str, seed=None, threads=None) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ParseError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed config {path}: {exc}")
    config = _merge(DEFAULT_CONFIG, raw)
    if seed is not None:
        config["mcmc"]["seed"] = seed
    config["threads"] = threads if threads is not None else (os.cpu_count() or 1)
    return config


def _read_geometry(config: dict):
    path = config["input"]["geometry_path"]
    if not path:
        raise ParseError("config is missing input.geometry_path")
    with open(path, "r", encoding="utf-8") as fh:
        gs, table = parse_geojson(fh.read(), id_field=config["input"]["id_field"])
    data_path = config["input"]["data_path"]
    if data_path:
        extra = pd.read_csv(data_path)
        id_col = config["input"]["id_field"]
        if id_col not in extra.columns and "site_id" not in extra.columns:
            raise ParseError(f"{data_path}: needs an '{id_col}' or 'site_id' column to join on")
        key = id_col if id_col in extra.columns else "site_id"
        extra = extra.rename(columns={key: "site_id"})
        extra["site_id"] = extra["site_id"].astype(str)
        table = table.merge(extra, on="site_id", how="left", validate="one_to_one")
    return gs, table


def _model_spec(config: dict) -> ModelSpec:
    m = config["model"]
    p = config["priors"]
    priors = PriorSet(
        alpha_sd=p.get("alpha_sd", 100.0),
        beta_sd=p.get("beta_sd", 100.0),
        tau_shape=p.get("tau_shape", 1.0),
        tau_rate=p.get("tau_rate", 5e-5),
        phi_bounds=tuple(p["phi_bounds"]) if p.get("phi_bounds") else None,
        nugget_shape=p.get("nugget_shape", 1.0),
        nugget_rate=p.get("nugget_rate", 5e-5),
    )
    mc = config["mcmc"]
    settings = McmcSettings(
        n_chains=int(mc["chains"]),
        max_iterations=int(mc["max_iterations"]),
        burn_in=float(mc["burn_in"]),
        thin=int(mc["thin"]),
        seed=int(mc["seed"]),
        ess_target=float(mc["ess_target"]),
        adapt_interval=int(mc["adapt_interval"]),
        target_acceptance=float(mc["target_acceptance"]),
        collapse_gaussian=bool(mc.get("collapse_gaussian", True)),
        fixed=dict(mc.get("fixed", {})),
    )
    return ModelSpec(
        likelihood=m["likelihood"],
        random_effect=m["random_effect"],
        response=m["response"],
        covariates=tuple(m["covariates"]),
        offset=m["offset"],
        nugget=bool(m["nugget"]),
        priors=priors,
        mcmc=settings,
    )


def _write_effective_config(config: dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "effective_config.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_distances(config: dict) -> int:
    gs, _ = _read_geometry(config)
    dist = config["distance"]
    dm = distance_matrix(
        gs,
        kind=dist["kind"],
        densify=dist["densify"],
        n_samples=int(dist["n_samples"]),
        seed=int(config["mcmc"]["seed"]),
        threads=int(config["threads"]),
    )
    out_dir = config["output"]["dir"]
    _write_effective_config(config, out_dir)
    out_path = os.path.join(out_dir, f"distances_{dm.kind}.csv")
    write_distance_csv(dm, out_path)
    print(out_path)
    return 0


def cmd_fit(config: dict) -> int:
    gs, table = _read_geometry(config)
    spec = _model_spec(config)
    out_dir = config["output"]["dir"]
    _write_effective_config(config, out_dir)
    written = [os.path.join(out_dir, "effective_config.json")]
    try:
        distances = None
        if spec.is_hgp:
            distances = distance_matrix(
                gs,
                kind="hausdorff",
                densify=config["distance"]["densify"],
                threads=int(config["threads"]),
            )
        ps = fit(spec, gs, table, distances=distances)

        draws_path = os.path.join(out_dir, "draws.csv")
        write_draws_csv(ps, draws_path)
        written.append(draws_path)

        summary_path = os.path.join(out_dir, "summary.csv")
        write_summary_csv(summary(ps), summary_path)
        written.append(summary_path)

        w = waic(ps)
        waic_path = os.path.join(out_dir, "waic.csv")
        write_waic_csv(
            pd.DataFrame(
                [{"model_label": ps.model_label, "waic": w.waic, "lppd": w.lppd, "p_waic": w.p_waic}]
            ),
            waic_path,
            fingerprint=ps.data_fingerprint,
        )
        written.append(waic_path)

        log = {
            "acceptance_rates": {k: list(v) for k, v in ps.acceptance.items()},
            "max_jitter": ps.max_jitter,
            "stop_iterations": list(ps.stop_iterations),
            "converged": list(ps.converged),
            "n_draws": ps.n_draws,
            "meta": {k: _jsonable(v) for k, v in ps.meta.items()},
        }
        with open(os.path.join(out_dir, "fit_log.json"), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(log, fh, indent=2)
            fh.write("\n")
    except Exception:
        # never leave a partially written run directory behind
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        raise
    print(out_dir)
    return 0


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, tuple):
        return list(v)
    return v


def cmd_compare(config: dict) -> int:
    runs = config["compare"]["runs"]
    if not runs:
        raise ParseError("config.compare.runs is empty")
    labels = config["compare"]["labels"] or [os.path.basename(os.path.normpath(r)) for r in runs]
    rows = []
    prints = set()
    for run, label in zip(runs, labels):
        frame, meta = read_waic_csv(os.path.join(run, "waic.csv"))
        prints.add(meta.get("fingerprint", ""))
        row = frame.iloc[0].to_dict()
        row["model_label"] = label
        rows.append(row)
    if len(prints) > 1:
        raise ComparisonMismatchError("runs were fitted to different response data")
    table = (
        pd.DataFrame(rows)[["model_label", "waic", "lppd", "p_waic"]]
        .sort_values(["waic", "model_label"], kind="stable", ignore_index=True)
    )
    out_dir = config["output"]["dir"]
    _write_effective_config(config, out_dir)
    out_path = os.path.join(out_dir, "comparison.csv")
    write_waic_csv(table, out_path, fingerprint=next(iter(prints)))
    print(out_path)
    return 0


def cmd_predict(config: dict) -> int:
    fit_dir = config["predict"]["fit_dir"]
    new_path = config["predict"]["new_geometry_path"]
    if not fit_dir or not new_path:
        raise ParseError("config.predict needs fit_dir and new_geometry_path")
    with open(os.path.join(fit_dir, "effective_config.json"), "r", encoding="utf-8") as fh:
        fit_config = json.load(fh)
    spec = _model_spec(fit_config)
    gs_obs, _ = _read_geometry(fit_config)
    frame, meta = read_draws_csv(os.path.join(fit_dir, "draws.csv"))
    ps = posterior_from_frame(frame, meta)
    ps.meta["densify"] = fit_config["distance"]["densify"] or 0.0

    with open(new_path, "r", encoding="utf-8") as fh:
        gs_new, new_table = parse_geojson(fh.read(), id_field=config["input"]["id_field"] or "id")
    result = predict(
        ps,
        spec,
        gs_obs,
        gs_new,
        new_covariates=new_table if spec.covariates else None,
        seed=int(config["mcmc"]["seed"]),
        level=float(config["predict"]["level"]),
    )
    out_dir = config["output"]["dir"]
    _write_effective_config(config, out_dir)
    out_path = os.path.join(out_dir, "predictions.geojson")
    _write_prediction_geojson(gs_new, new_table, result, out_path)
    print(out_path)
    return 0


def _geom_to_geojson(geom) -> dict:
    from .geometry import MultiPolygon, Point, Polygon

    def ring_coords(ring):
        closed = np.vstack([ring, ring[:1]])
        return [[float(x), float(y)] for x, y in closed]

    if isinstance(geom, Point):
        return {"type": "Point", "coordinates": [float(geom.x), float(geom.y)]}
    if isinstance(geom, Polygon):
        return {"type": "Polygon", "coordinates": [ring_coords(r) for r in geom.rings]}
    return {
        "type": "MultiPolygon",
        "coordinates": [[ring_coords(r) for r in p.rings] for p in geom.parts],
    }


def _write_prediction_geojson(gs_new, new_table, result, out_path) -> None:
    by_id = result.set_index("site_id")
    features = []
    props_by_id = None
    if new_table is not None and "site_id" in new_table.columns:
        props_by_id = new_table.set_index("site_id")
    for sid, geom in gs_new.sites:
        props = {"id": sid}
        if props_by_id is not None and sid in props_by_id.index:
            for k, v in props_by_id.loc[sid].items():
                props[k] = _jsonable(v)
        props["pred_mean"] = float(by_id.loc[sid, "pred_mean"])
        props["pred_lo"] = float(by_id.loc[sid, "pred_lo"])
        props["pred_hi"] = float(by_id.loc[sid, "pred_hi"])
        features.append(
            {"type": "Feature", "geometry": _geom_to_geojson(geom), "properties": props}
        )
    doc = {"type": "FeatureCollection", "features": features}
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def cmd_simulate(config: dict) -> int:
    gs, table = _read_geometry(config)
    sim = config["simulate"]
    if not sim:
        raise ParseError("config.simulate block is required for the simulate command")
    likelihood = sim.get("likelihood", config["model"]["likelihood"])
    re_kind = sim.get("random_effect", config["model"]["random_effect"])
    if re_kind not in HGP_SMOOTHNESS:
        raise GeometryError("simulation draws the latent field from a set-distance model")
    alpha = float(sim.get("alpha", 0.0))
    tau = float(sim.get("tau", 1.0))
    phi = sim.get("phi")
    betas = dict(sim.get("beta", {}))
    offset_value = float(sim.get("offset", 1.0))
    nugget_sd = float(sim.get("nugget_sd", 0.0))
    seed = int(config["mcmc"]["seed"])
    rng = np.random.default_rng(seed)

    dm = distance_matrix(
        gs, kind="hausdorff", densify=config["distance"]["densify"], threads=int(config["threads"])
    )
    if phi is None:
        phi = float(np.median(dm.offdiagonal()))
    n = len(gs)
    s = latent_field_draw(dm, HGP_SMOOTHNESS[re_kind], float(phi), tau, rng)

    covariate_values = {}
    for name in betas:
        if table is not None and name in table.columns:
            covariate_values[name] = table[name].to_numpy(dtype=float)
        else:
            covariate_values[name] = rng.standard_normal(n)
    eta = alpha + s
    for name, b in betas.items():
        eta = eta + float(b) * covariate_values[name]

    if likelihood == "poisson_offset":
        offsets = np.full(n, offset_value)
        response = rng.poisson(offsets * np.exp(eta)).astype(float)
    else:
        offsets = None
        response = eta + (nugget_sd * rng.standard_normal(n) if nugget_sd else 0.0)

    out_dir = config["output"]["dir"]
    _write_effective_config(config, out_dir)
    features = []
    for i, (sid, geom) in enumerate(gs.sites):
        props = {"id": sid, "response": float(response[i])}
        if offsets is not None:
            props["offset"] = float(offsets[i])
        for name in covariate_values:
            props[name] = float(covariate_values[name][i])
        features.append(
            {"type": "Feature", "geometry": _geom_to_geojson(geom), "properties": props}
        )
    data_path = os.path.join(out_dir, "simulated.geojson")
    with open(data_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh, indent=2)
        fh.write("\n")

    truth_rows = [
        {"parameter": "alpha", "value": alpha},
        {"parameter": "tau", "value": tau},
        {"parameter": "phi", "value": float(phi)},
    ]
    truth_rows += [{"parameter": f"beta_{k}", "value": float(v)} for k, v in betas.items()]
    truth_rows += [
        {"parameter": f"s_{sid}", "value": float(s[i])} for i, sid in enumerate(gs.ids)
    ]
    truth_path = os.path.join(out_dir, "truth.csv")
    with open(truth_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("parameter,value\n")
        for row in truth_rows:
            fh.write(f"{row['parameter']},{row['value']:.17g}\n")
    print(data_path)
    return 0


COMMANDS = {
    "distances": cmd_distances,
    "fit": cmd_fit,
    "compare": cmd_compare,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hgp", description="Spatial set-distance models: distances, fitting, prediction."
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to a JSON run configuration")
    parser.add_argument("--threads", type=int, default=None, help="parallel workers (default: cores)")
    parser.add_argument("--seed", type=int, default=None, help="override mcmc.seed")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, seed=args.seed, threads=args.threads)
        return COMMANDS[args.command](config)
    except HgpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for klass, code in _EXIT_CODES:
            if isinstance(exc, klass):
                return code
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
