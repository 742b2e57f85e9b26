"""Batch command-line interface for reproducible runs.

Subcommands: generate, fit, select-dim, predict, evaluate.  Every value
may come from a JSON --config file instead of a flag, with explicit
flags taking precedence; unknown config keys are rejected before any
output is written.  Given the same config and seed the output files are
byte-identical across runs — wall-clock timing goes to stderr only.

numpy and the library modules are imported inside the command handlers
so that the `threads` option can cap BLAS/OpenMP parallelism through
environment variables before numpy first loads.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

from .errors import ConfigError, GPChoiceError, SchemaError, ValidationError

GENERATORS = ("example1", "kernel_mixture", "zdt1", "dtlz2", "from_table")

_COMMON_KEYS = {"seed": int, "threads": int, "output_dir": str}
_COMMON_DEFAULTS = {"seed": 0, "threads": None, "output_dir": "."}

_FIT_CONFIG_KEYS = {
    "iters": int,
    "learning_rate": float,
    "mc_samples": int,
    "shared_lengthscales": bool,
    "jitter": float,
    "init_lengthscale": float,
    "init_sigma": float,
    "optimize_hyperparams": bool,
    "map_iters": int,
    "map_learning_rate": float,
    "final_elbo_samples": int,
    "convergence_window": int,
    "convergence_tol": float,
}

_KEYS = {
    "generate": {
        "generator": str,
        "n_points": int,
        "m_sets": int,
        "set_size": int,
        "n_features": int,
        "n_objectives": int,
        "latent_states": int,
        "n_pairs": int,
        "pair_mode": str,
        "protocol": str,
        "convert": str,
        "features_file": str,
        "outputs_file": str,
        **_COMMON_KEYS,
    },
    "fit": {"dataset": str, "latent_dim": int, **_FIT_CONFIG_KEYS, **_COMMON_KEYS},
    "select-dim": {
        "dataset": str,
        "d_max": int,
        "loo_samples": int,
        "early_stop": bool,
        **_FIT_CONFIG_KEYS,
        **_COMMON_KEYS,
    },
    "predict": {
        "model": str,
        "test_set": str,
        "n_samples": int,
        "mode": str,
        "subset_probs": bool,
        **_COMMON_KEYS,
    },
    "evaluate": {
        "predictions": str,
        "truth": str,
        "aggregate": list,
        **_COMMON_KEYS,
    },
}

_DEFAULTS = {
    "generate": {
        "n_points": 100,
        "m_sets": 100,
        "set_size": 3,
        "n_objectives": 2,
        "latent_states": 2,
        "pair_mode": "D2",
        "convert": "none",
        **_COMMON_DEFAULTS,
    },
    "fit": {**_COMMON_DEFAULTS},
    "select-dim": {"loo_samples": 4000, "early_stop": False, **_COMMON_DEFAULTS},
    "predict": {
        "n_samples": 1000,
        "mode": "marginal",
        "subset_probs": False,
        **_COMMON_DEFAULTS,
    },
    "evaluate": {**_COMMON_DEFAULTS},
}

_PATH_KEYS = (
    "features_file",
    "outputs_file",
    "dataset",
    "model",
    "test_set",
    "predictions",
    "truth",
    "output_dir",
)


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="JSON file supplying any keys; flags override")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int, help="cap BLAS/OpenMP thread count")
    sp.add_argument("--output-dir", dest="output_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpchoice",
        description="Learn choice functions from set-valued choice data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("generate", help="write a synthetic dataset + ground truth")
    sp.add_argument("--generator")
    sp.add_argument("--n-points", dest="n_points", type=int)
    sp.add_argument("--m-sets", dest="m_sets", type=int)
    sp.add_argument("--set-size", dest="set_size", type=int)
    sp.add_argument("--n-features", dest="n_features", type=int)
    sp.add_argument("--n-objectives", dest="n_objectives", type=int)
    sp.add_argument("--latent-states", dest="latent_states", type=int)
    sp.add_argument("--n-pairs", dest="n_pairs", type=int)
    sp.add_argument("--pair-mode", dest="pair_mode")
    sp.add_argument("--protocol", help="'sets' or 'pairs'")
    sp.add_argument("--convert", help="'none', 'random', or 'majority'")
    sp.add_argument("--features-file", dest="features_file")
    sp.add_argument("--outputs-file", dest="outputs_file")
    _add_common(sp)

    sp = sub.add_parser("fit", help="fit a model at a fixed latent dimension")
    sp.add_argument("--dataset")
    sp.add_argument("--latent-dim", dest="latent_dim", type=int)
    _add_fit_flags(sp)
    _add_common(sp)

    sp = sub.add_parser("select-dim", help="select the latent dimension by LOO")
    sp.add_argument("--dataset")
    sp.add_argument("--d-max", dest="d_max", type=int)
    sp.add_argument("--loo-samples", dest="loo_samples", type=int)
    sp.add_argument("--early-stop", dest="early_stop",
                    action=argparse.BooleanOptionalAction)
    _add_fit_flags(sp)
    _add_common(sp)

    sp = sub.add_parser("predict", help="predict choice sets for test observations")
    sp.add_argument("--model")
    sp.add_argument("--test-set", dest="test_set")
    sp.add_argument("--n-samples", dest="n_samples", type=int)
    sp.add_argument("--mode", help="'marginal' or 'exact'")
    sp.add_argument("--subset-probs", dest="subset_probs",
                    action=argparse.BooleanOptionalAction)
    _add_common(sp)

    sp = sub.add_parser("evaluate", help="score predictions against ground truth")
    sp.add_argument("--predictions")
    sp.add_argument("--truth")
    sp.add_argument("--aggregate", nargs="+",
                    help="directories with eval.json files to aggregate")
    _add_common(sp)
    return parser


def _add_fit_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--iters", type=int)
    sp.add_argument("--learning-rate", dest="learning_rate", type=float)
    sp.add_argument("--mc-samples", dest="mc_samples", type=int)
    sp.add_argument("--shared-lengthscales", dest="shared_lengthscales",
                    action=argparse.BooleanOptionalAction)
    sp.add_argument("--jitter", type=float)
    sp.add_argument("--init-lengthscale", dest="init_lengthscale", type=float)
    sp.add_argument("--init-sigma", dest="init_sigma", type=float)
    sp.add_argument("--optimize-hyperparams", dest="optimize_hyperparams",
                    action=argparse.BooleanOptionalAction)
    sp.add_argument("--map-iters", dest="map_iters", type=int)
    sp.add_argument("--map-learning-rate", dest="map_learning_rate", type=float)
    sp.add_argument("--final-elbo-samples", dest="final_elbo_samples", type=int)
    sp.add_argument("--convergence-window", dest="convergence_window", type=int)
    sp.add_argument("--convergence-tol", dest="convergence_tol", type=float)


def _merge_config(args: argparse.Namespace) -> dict:
    """Config file < flags; unknown keys rejected; defaults applied last."""
    command = args.command
    known = _KEYS[command]
    merged: dict = {}
    if args.config is not None:
        if not os.path.isfile(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        with open(args.config, encoding="utf-8") as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(payload) - set(known))
        if unknown:
            raise ConfigError(
                f"unknown config keys {unknown}; known keys: {sorted(known)}"
            )
        for key, value in payload.items():
            _check_type(key, value, known[key])
            merged[key] = value
    for key in known:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    for key, default in _DEFAULTS[command].items():
        merged.setdefault(key, default)
    for key in known:
        merged.setdefault(key, None)
    for key in _PATH_KEYS:
        if merged.get(key) is not None:
            merged[key] = os.path.abspath(merged[key])
    if merged.get("aggregate"):
        merged["aggregate"] = [os.path.abspath(p) for p in merged["aggregate"]]
    return merged


def _check_type(key: str, value, expected: type) -> None:
    if value is None:
        return
    if expected is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif expected is list:
        ok = isinstance(value, list) and all(isinstance(v, str) for v in value)
    else:
        ok = isinstance(value, expected)
    if not ok:
        raise ConfigError(
            f"config key {key!r} must be {expected.__name__}, got {value!r}"
        )


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"missing required keys: {missing}")


def _require_file(path: str, what: str) -> None:
    if not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")


def _set_threads(threads) -> None:
    if threads is None:
        return
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = str(threads)


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_table(path: str) -> "np.ndarray":  # noqa: F821 — numpy imported lazily
    import numpy as np

    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            return np.atleast_2d(np.asarray(json.load(fh), dtype=float))
    if path.endswith(".csv"):
        return np.loadtxt(path, delimiter=",", ndmin=2)
    raise ConfigError(f"table files must be .csv or .json, got {path}")


def _dense_pairs(n: int) -> "np.ndarray":  # noqa: F821
    import numpy as np

    return np.array(
        [(i, j) for i in range(n) for j in range(i + 1, n)], dtype=np.intp
    )


def _build_fit_config(cfg: dict):
    from .inference import FitConfig

    kwargs = {k: cfg[k] for k in _FIT_CONFIG_KEYS if cfg.get(k) is not None}
    return FitConfig(seed=cfg["seed"], **kwargs)


def cmd_generate(cfg: dict) -> None:
    generator = cfg.get("generator")
    if generator not in GENERATORS:
        raise ConfigError(
            f"unknown generator {generator!r}; available: {', '.join(GENERATORS)}"
        )
    protocol = cfg.get("protocol")
    if protocol not in (None, "sets", "pairs"):
        raise ConfigError(f"protocol must be 'sets' or 'pairs', got {protocol!r}")
    convert = cfg["convert"]
    if convert not in ("none", "random", "majority"):
        raise ConfigError(
            f"convert must be 'none', 'random', or 'majority', got {convert!r}"
        )
    if generator == "from_table":
        _require(cfg, "features_file", "outputs_file")
        _require_file(cfg["features_file"], "features file")
        _require_file(cfg["outputs_file"], "outputs file")

    import numpy as np

    from . import synthetic as syn
    from .data import save_dataset

    seed = cfg["seed"]
    n_points = cfg["n_points"]
    truth: dict = {"schema_version": 1, "generator": generator, "seed": seed}
    assignment = None

    if generator == "example1":
        if protocol == "pairs":
            raise ConfigError("example1 uses the 'sets' protocol")
        dataset = syn.gen_example1(n_points, cfg["m_sets"], cfg["set_size"], seed=seed)
        utilities = syn.example1_bank().evaluate(dataset.objects.features)
        truth["latent_dim"] = 2
    elif generator == "kernel_mixture":
        if protocol == "sets":
            raise ConfigError("kernel_mixture generates pair data only")
        c = cfg.get("n_features") or 1
        bank, assignment = syn.gen_kernel_mixture(
            n_points, c, cfg["latent_states"], seed=seed
        )
        if cfg["pair_mode"] not in ("D1", "D2"):
            raise ConfigError(f"pair_mode must be 'D1' or 'D2', got {cfg['pair_mode']!r}")
        if cfg.get("n_pairs") is not None:
            pairs = syn.sample_index_pairs(n_points, cfg["n_pairs"], seed=seed + 1)
        else:
            pairs = _dense_pairs(n_points)
        dataset = syn.gen_pairwise_datasets(bank, assignment, pairs, cfg["pair_mode"])
        utilities = bank.evaluate(bank.anchors)
        if convert != "none":
            dataset = syn.choices_to_preferences(
                dataset, utilities, convert, seed=seed + 2
            )
        truth["latent_dim"] = bank.d
    elif generator in ("zdt1", "dtlz2"):
        n_obj = 2 if generator == "zdt1" else cfg["n_objectives"]
        c = cfg.get("n_features") or max(2, n_obj)
        bank = syn.test_suite_bank(generator, n_obj)
        if protocol in (None, "sets"):
            dataset = syn.gen_bank_dataset(
                bank, n_points, cfg["m_sets"], cfg["set_size"], c, seed=seed
            )
            utilities = bank.evaluate(dataset.objects.features)
        else:
            rng = np.random.default_rng(seed)
            features = rng.uniform(0.0, 1.0, size=(n_points, c))
            utilities = bank.evaluate(features)
            if cfg.get("n_pairs") is not None:
                pairs = syn.sample_index_pairs(n_points, cfg["n_pairs"], seed=seed + 1)
            else:
                pairs = _dense_pairs(n_points)
            dataset = syn.outputs_to_choice_pairs(features, utilities, pairs)
            if convert != "none":
                dataset = syn.choices_to_preferences(
                    dataset, utilities, convert, seed=seed + 2
                )
        truth["latent_dim"] = bank.d
    else:  # from_table
        if protocol == "sets":
            raise ConfigError("from_table generates pair data only")
        features = _load_table(cfg["features_file"])
        utilities = _load_table(cfg["outputs_file"])
        if cfg.get("n_pairs") is not None:
            pairs = syn.sample_index_pairs(
                features.shape[0], cfg["n_pairs"], seed=seed + 1
            )
        else:
            pairs = _dense_pairs(features.shape[0])
        dataset = syn.outputs_to_choice_pairs(features, utilities, pairs)
        if convert != "none":
            dataset = syn.choices_to_preferences(
                dataset, utilities, convert, seed=seed + 2
            )
        truth["latent_dim"] = utilities.shape[1]

    truth["features"] = dataset.objects.features.tolist()
    truth["utilities"] = np.asarray(utilities).tolist()
    if assignment is not None:
        truth["assignment"] = [int(z) for z in assignment]

    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    save_dataset(dataset, os.path.join(out, "dataset.json"))
    _write_json(os.path.join(out, "truth.json"), truth)
    print(
        f"wrote {dataset.n_observations} observations over "
        f"{dataset.n_objects} objects to {out}",
        file=sys.stderr,
    )


def cmd_fit(cfg: dict) -> None:
    _require(cfg, "dataset", "latent_dim")
    _require_file(cfg["dataset"], "dataset")

    from .data import load_dataset
    from .inference import fit
    from .model import save_model

    dataset = load_dataset(cfg["dataset"])
    fit_config = _build_fit_config(cfg)
    model, report = fit(dataset, cfg["latent_dim"], fit_config)
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    save_model(model, os.path.join(out, "model.json"))
    _write_json(
        os.path.join(out, "fit_report.json"),
        {
            "final_elbo": report.final_elbo,
            "iterations": report.iterations,
            "converged": report.converged,
            "seed": report.seed,
            "warnings": list(report.warnings),
        },
    )
    print(
        f"fit d={cfg['latent_dim']}: elbo={report.final_elbo:.4f} "
        f"converged={report.converged}",
        file=sys.stderr,
    )


def cmd_select_dim(cfg: dict) -> None:
    _require(cfg, "dataset", "d_max")
    _require_file(cfg["dataset"], "dataset")

    from .data import load_dataset
    from .model import save_model
    from .selection import select_latent_dim

    dataset = load_dataset(cfg["dataset"])
    fit_config = _build_fit_config(cfg)
    d_star, rows, models = select_latent_dim(
        dataset,
        cfg["d_max"],
        config=fit_config,
        loo_samples=cfg["loo_samples"],
        early_stop=cfg["early_stop"],
    )
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "selection.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d", "phi", "max_khat", "n_bad_khat"])
        for row in rows:
            writer.writerow([row.d, row.phi, row.max_khat, row.n_bad_khat])
    save_model(models[d_star], os.path.join(out, "model.json"))
    print(f"selected latent dimension {d_star}", file=sys.stderr)


def cmd_predict(cfg: dict) -> None:
    _require(cfg, "model", "test_set")
    _require_file(cfg["model"], "model")
    _require_file(cfg["test_set"], "test set")
    if cfg["mode"] not in ("marginal", "exact"):
        raise ConfigError(f"mode must be 'marginal' or 'exact', got {cfg['mode']!r}")

    from .data import load_dataset
    from .model import load_model
    from .prediction import (
        EXACT_MODE_LIMIT,
        per_object_choice_probabilities,
        predict_choice_set,
        subset_probabilities,
    )

    model = load_model(cfg["model"])
    test = load_dataset(cfg["test_set"])
    if test.objects.n_features != model.objects.n_features:
        raise SchemaError(
            f"model was trained on {model.objects.n_features} features but the "
            f"test set has {test.objects.n_features}"
        )
    x_test = test.objects.features
    n_samples = cfg["n_samples"]
    entries = []
    for k, obs in enumerate(test.observations):
        rows = list(obs.set_indices)
        x_sub = x_test[rows]
        local = tuple(range(len(rows)))
        seed_k = cfg["seed"] + k
        predicted = predict_choice_set(
            model, x_sub, local, n_samples=n_samples, seed=seed_k, mode=cfg["mode"]
        )
        probs = per_object_choice_probabilities(
            model, x_sub, local, n_samples=n_samples, seed=seed_k
        )
        entry = {
            "set": rows,
            "predicted": sorted(rows[j] for j in predicted),
            "object_probs": [float(p) for p in probs],
        }
        if cfg["subset_probs"] and len(rows) <= EXACT_MODE_LIMIT:
            dist = subset_probabilities(
                model, x_sub, local, n_samples=n_samples, seed=seed_k
            )
            entry["subset_probs"] = [
                [[rows[j] for j in subset], float(p)] for subset, p in dist
            ]
        entries.append(entry)
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    _write_json(
        os.path.join(out, "predictions.json"),
        {
            "schema_version": 1,
            "mode": cfg["mode"],
            "n_samples": n_samples,
            "seed": cfg["seed"],
            "observations": entries,
        },
    )
    print(f"predicted {len(entries)} observations", file=sys.stderr)


def _load_predictions(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"predictions file is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "observations" not in payload:
        raise SchemaError("predictions file must hold an object with 'observations'")
    if not payload["observations"]:
        raise SchemaError("predictions file holds no observations")
    return payload


def cmd_evaluate(cfg: dict) -> None:
    out = cfg["output_dir"]
    if cfg.get("aggregate"):
        rows = []
        for directory in cfg["aggregate"]:
            path = os.path.join(directory, "eval.json")
            _require_file(path, "eval report")
            with open(path, encoding="utf-8") as fh:
                rows.append(json.load(fh))
        metrics = [
            m
            for m in ("a_mean", "accuracy", "tpr", "tnr", "pairwise_accuracy")
            if all(m in r for r in rows)
        ]
        import numpy as np

        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "aggregate.csv"), "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "mean", "std"])
            for metric in metrics:
                values = np.array([float(r[metric]) for r in rows])
                std = values.std(ddof=1) if len(values) > 1 else 0.0
                writer.writerow([metric, float(values.mean()), float(std)])
        print(f"aggregated {len(rows)} reports", file=sys.stderr)
        return

    _require(cfg, "predictions", "truth")
    _require_file(cfg["predictions"], "predictions")
    _require_file(cfg["truth"], "truth")

    from .data import load_dataset
    from .evaluation import a_mean, pairwise_accuracy

    payload = _load_predictions(cfg["predictions"])
    truth = load_dataset(cfg["truth"])
    entries = payload["observations"]
    if len(entries) != truth.n_observations:
        raise ValidationError(
            f"{len(entries)} predictions for {truth.n_observations} observations"
        )
    for entry, obs in zip(entries, truth.observations):
        if tuple(entry["set"]) != obs.set_indices:
            raise ValidationError(
                f"prediction set {entry['set']} does not match the ground-truth "
                f"choice set {list(obs.set_indices)}"
            )
    predicted = [entry["predicted"] for entry in entries]
    report = a_mean(predicted, truth.observations)
    result = report.to_dict()
    if all(obs.set_size == 2 for obs in truth.observations):
        result["pairwise_accuracy"] = pairwise_accuracy(
            predicted, truth.observations
        )
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "eval.json"), result)
    print(f"a_mean={report.a_mean:.4f}", file=sys.stderr)


_HANDLERS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "select-dim": cmd_select_dim,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        cfg = _merge_config(args)
        _set_threads(cfg.get("threads"))
        _HANDLERS[args.command](cfg)
    except GPChoiceError as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 2 if isinstance(exc, ValidationError) else 1
    except OSError as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    print(f"elapsed {time.perf_counter() - start:.2f}s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
