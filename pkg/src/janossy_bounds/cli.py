import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .architectures import ENCODER_KINDS, SHARED_KINDS, EncoderSpec, Model, random_encoder
from .bounds import BOUNDS_CSV_COLUMNS, BOUNDS_CSV_VERSION, asymptotic_constant_check, bounds_table, monotonicity_report
from .collision import (
    BorsukUlamMap,
    CollisionCertificate,
    FixedFeatureCollision,
    SearchConfig,
    certificate_document,
    find_collision,
    fixed_feature_collision,
    gap_certificate,
    linear_collision_oracle,
    verify_certificate,
)
from .config import default_output_dir, derive_seed, env_or_config, log, require_float, require_int, to_bool
from .constructions import sample_obstruction
from .experiments import CSV_COLUMNS, CSV_VERSION, LatentSweepRunner, TrainConfig
from .geometry import antipodal_violations, assign_regions, regular_simplex, sample_sphere_array
from .numerics import NonFiniteError
from .rigidity import check_rigidity, product_map, random_increment, random_tails

DEFAULT_SEED = require_int(env_or_config("JANOSSY_SEED", "runtime.seed", 0, int), "runtime.seed")
DEFAULT_EPSILON = require_float(env_or_config("JANOSSY_EPSILON", "geometry.epsilon", 0.25, float), "geometry.epsilon")
DEFAULT_SAMPLES_PER_REGION = require_int(
    env_or_config("SAMPLES_PER_REGION", "constructions.samples_per_region", 64, int), "constructions.samples_per_region"
)
DEFAULT_HIDDEN = env_or_config("COLLISION_HIDDEN_WIDTHS", "collision.hidden_widths", [8])
RIGIDITY_TOL = require_float(env_or_config("RIGIDITY_TOLERANCE", "rigidity.tolerance", 1e-9, float), "rigidity.tolerance")
CONTROL_THRESHOLD = 1e-3


class UsageError(Exception):
    """Bad flag combination detected after parsing."""


@dataclass
class RunConfig:
    subcommand: str
    parameters: dict
    seeds: dict = field(default_factory=dict)
    config_file: str = ""
    version: str = __version__

    def to_dict(self) -> dict:
        return asdict(self)


def parse_range(text: str) -> list[int]:
    """``"1..4"``, ``"2,3,5"`` or ``"3"`` to a list of integers."""
    value = text.strip()
    try:
        if ".." in value:
            low, high = (int(part) for part in value.split("..", 1))
            if high < low:
                raise ValueError
            return list(range(low, high + 1))
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Invalid range '{text}'. Use A..B, A,B,C or A.") from None


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected a positive integer, got '{text}'") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"Expected a positive integer, got {value}")
    return value


def widths(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: "" if row.get(key) is None else row.get(key) for key in columns})


def emit(payload) -> None:
    print(json.dumps(payload, indent=2))


def search_config(args, seed: int) -> SearchConfig:
    return SearchConfig.from_config(
        restarts=args.restarts, max_iterations=args.max_iterations, tolerance=args.tol, seed=seed
    )


def cmd_bounds(args) -> int:
    rows = bounds_table(args.d_range, args.n_range, args.k_range, p=args.p)
    out = Path(args.out) if args.out else default_output_dir() / "bounds.csv"
    log(f"[start] Bounds table d={args.d_range} n={args.n_range} k={args.k_range} p={args.p}")

    reports = {}
    for k in args.k_range:
        if any(n > k for n in args.n_range):
            reports[str(k)] = {
                "asymptotic": asymptotic_constant_check(k, args.d_range, args.n_range).to_dict(),
                "monotonicity": monotonicity_report(k, args.d_range, args.n_range),
            }

    run_config = RunConfig("bounds", {"d": args.d_range, "n": args.n_range, "k": args.k_range, "p": args.p, "out": str(out)})
    write_csv(out, BOUNDS_CSV_COLUMNS, [row.csv_row() for row in rows])
    write_json(
        out.with_name(out.name + ".config.json"),
        {
            "config": run_config.to_dict(),
            "csv_version": BOUNDS_CSV_VERSION,
            "rows": [row.to_dict() for row in rows],
            "reports": reports,
        },
    )
    log(f"[done] Wrote {len(rows)} rows to {out}")
    return 0


def cmd_cover_check(args) -> int:
    cover = regular_simplex(args.b)
    gram = cover.gram()
    expected = np.full_like(gram, -1.0 / args.b)
    np.fill_diagonal(expected, 1.0)
    gram_error = float(np.abs(gram - expected).max())
    centroid = float(np.linalg.norm(cover.vertices.sum(axis=0)))

    directions = sample_sphere_array(args.b, args.samples, derive_seed(args.seed, "cover"))
    violations = int(antipodal_violations(cover, directions).sum())
    counts = np.bincount(assign_regions(cover, directions), minlength=cover.region_count + 1)[1:]

    passed = gram_error <= 1e-10 and centroid <= 1e-10 and violations == 0 and bool(np.all(counts > 0))
    emit(
        {
            "b": args.b,
            "samples": args.samples,
            "seed": args.seed,
            "gram_max_error": gram_error,
            "centroid_norm": centroid,
            "violations": violations,
            "region_counts": counts.tolist(),
            "passed": passed,
        }
    )
    log(f"[{'ok' if passed else 'error'}] Cover check b={args.b}: {violations} antipodal violations in {args.samples} samples")
    return 0 if passed else 1


def cmd_rigidity_check(args) -> int:
    if not 1 <= args.k < args.n:
        raise UsageError(f"Need 1 <= k < n, got k={args.k}, n={args.n}")
    encoders = args.encoders or require_int(env_or_config("RIGIDITY_ENCODERS", "rigidity.encoders", 20, int), "rigidity.encoders")
    tail_count = args.tails or require_int(env_or_config("RIGIDITY_TAILS", "rigidity.tails", 20, int), "rigidity.tails")
    negative_control = args.negative_control or to_bool(
        env_or_config("RIGIDITY_NEGATIVE_CONTROL", "rigidity.negative_control", False)
    )
    hidden = args.hidden_widths if args.hidden_widths is not None else DEFAULT_HIDDEN
    rng = np.random.default_rng(derive_seed(args.seed, "rigidity"))
    log(f"[start] Rigidity check d={args.d} n={args.n} k={args.k} M={args.M}: {encoders} encoders x {tail_count} tails")

    deviations = []
    control = []
    for index in range(encoders):
        enc = random_encoder("indexed_janossy", args.d, args.n, args.k, args.M, derive_seed(args.seed, f"encoder:{index}"), hidden)
        inc = random_increment(args.d, args.k, rng)
        tails = random_tails(args.d, args.n, args.k, tail_count, rng)
        deviations.append(check_rigidity(enc, inc, tails, args.tolerance).max_deviation)
        if negative_control:
            control.append(check_rigidity(product_map, inc, tails, args.tolerance).max_deviation)

    max_dev = max(deviations)
    passed = max_dev <= args.tolerance
    payload = {
        "d": args.d,
        "n": args.n,
        "k": args.k,
        "M": args.M,
        "encoders": encoders,
        "tails": tail_count,
        "tolerance": args.tolerance,
        "max_deviation": max_dev,
        "deviations": deviations,
        "passed": passed,
    }
    if negative_control:
        control_failed = min(control) > CONTROL_THRESHOLD
        payload["negative_control"] = {"min_deviation": min(control), "threshold": CONTROL_THRESHOLD, "failed_as_expected": control_failed}
        passed = passed and control_failed
        payload["passed"] = passed
    emit(payload)
    log(f"[{'ok' if passed else 'error'}] Max deviation {max_dev:.3e} (tolerance {args.tolerance:.1e})")
    return 0 if passed else 1


def _load_encoder(path: Path):
    data = json.loads(path.read_text(encoding="utf-8"))
    if "encoder" in data and "decoder" in data:
        model = Model.from_dict(data)
        return model.encoder, model
    return EncoderSpec.from_dict(data), None


def cmd_collision_find(args) -> int:
    if args.verify:
        document = json.loads(Path(args.verify).read_text(encoding="utf-8"))
        report = verify_certificate(document)
        emit(report.to_dict())
        log(f"[{'ok' if report.ok else 'error'}] Replayed residual {report.recomputed_residual:.3e} (drift {report.residual_drift:.1e})")
        return 0 if report.ok else 1

    missing = [flag for flag in ("d", "n", "k", "M") if getattr(args, flag) is None]
    if missing:
        raise UsageError(f"collision-find needs --{' --'.join(missing)} (or --verify)")

    seeds = {
        "instance": derive_seed(args.random_seed, "instance"),
        "encoder": derive_seed(args.random_seed, "encoder"),
        "search": derive_seed(args.random_seed, "search"),
    }
    inst = sample_obstruction(args.d, args.n, args.k, args.epsilon, args.samples_per_region, seeds["instance"])
    model = None
    if args.encoder_file:
        encoder, model = _load_encoder(Path(args.encoder_file))
    else:
        hidden = [] if args.affine else (args.hidden_widths if args.hidden_widths is not None else DEFAULT_HIDDEN)
        encoder = random_encoder(args.kind, args.d, args.n, args.k, args.M, seeds["encoder"], hidden)

    bu_map = BorsukUlamMap(encoder, inst)
    cfg = search_config(args, seeds["search"])
    log(f"[start] Collision search d={args.d} n={args.n} k={args.k} M={encoder.latent_dim} kind={encoder.kind}")
    log(f"[start] M|A|={bu_map.output_dim} sphere dim={bu_map.sphere_dim} guaranteed={bu_map.guaranteed}")

    outcome = None
    if bu_map.encoder.is_affine:
        outcome = linear_collision_oracle(bu_map, cfg)
    if not isinstance(outcome, CollisionCertificate):
        outcome = find_collision(bu_map, cfg, log)

    run_config = RunConfig(
        "collision-find",
        {
            "d": args.d, "n": args.n, "k": args.k, "M": encoder.latent_dim, "kind": encoder.kind,
            "epsilon": args.epsilon, "samples_per_region": args.samples_per_region,
            "encoder_file": args.encoder_file or "", "search": asdict(cfg),
        },
        seeds={"random_seed": args.random_seed, **seeds},
    )
    out = Path(args.out) if args.out else default_output_dir() / "certificate.json"

    if not isinstance(outcome, CollisionCertificate):
        write_json(out, {"config": run_config.to_dict(), "failure": outcome.to_dict()})
        emit({"certified": False, "best_residual": outcome.best_residual, "reason": outcome.reason, "out": str(out)})
        log(f"[warn] No certificate; best residual {outcome.best_residual:.3e}")
        return 1

    gap = gap_certificate(model, inst, outcome) if model is not None else None
    document = certificate_document(gap.certificate if gap is not None else outcome, encoder, inst)
    document["config"] = run_config.to_dict()
    if gap is not None:
        document["gap"] = gap.to_dict()
        document["decoder"] = model.decoder.to_dict()
    write_json(out, document)
    emit(
        {
            "certified": True,
            "method": outcome.method,
            "residual": outcome.residual,
            "axis_residual": outcome.axis_residual,
            "grid_residual": outcome.grid_residual,
            "region": outcome.region,
            "restarts_used": outcome.restarts_used,
            "out": str(out),
        }
    )
    log(f"[ok] Certified collision via {outcome.method}, residual {outcome.residual:.3e}; wrote {out}")
    return 0


def cmd_fixed_feature(args) -> int:
    kind = args.kind
    k = 1 if kind == "deep_sets" else args.k
    if not 1 <= k <= args.n:
        raise UsageError(f"Need 1 <= k <= n, got k={k}, n={args.n}")
    seed = derive_seed(args.random_seed, "encoder")
    hidden = args.hidden_widths if args.hidden_widths is not None else DEFAULT_HIDDEN
    encoder = random_encoder(kind, args.d, args.n, k, args.M, seed, hidden)
    cfg = search_config(args, derive_seed(args.random_seed, "search"))
    log(f"[start] Fixed-feature collision d={args.d} n={args.n} k={k} M={args.M} (nd={args.n * args.d})")

    outcome = fixed_feature_collision(encoder, args.epsilon, cfg, log)
    out = Path(args.out) if args.out else default_output_dir() / "fixed_feature.json"
    run_config = RunConfig(
        "fixed-feature",
        {"d": args.d, "n": args.n, "k": k, "M": args.M, "kind": kind, "epsilon": args.epsilon, "search": asdict(cfg)},
        seeds={"random_seed": args.random_seed, "encoder": seed},
    )
    found = isinstance(outcome, FixedFeatureCollision)
    key = "collision" if found else "failure"
    write_json(out, {"config": run_config.to_dict(), "encoder": encoder.to_dict(), key: outcome.to_dict()})
    summary = {"found": found, "out": str(out)}
    summary.update({"residual": outcome.residual, "latent_gap": outcome.latent_gap} if found else {"best_residual": outcome.best_residual})
    emit(summary)
    return 0 if found else 1


def cmd_train_sweep(args) -> int:
    config_path = Path(args.config)
    raw = json.loads(config_path.read_text(encoding="utf-8"))
    out_dir = Path(args.out) if args.out else default_output_dir() / "sweep"
    if out_dir.exists() and any(out_dir.iterdir()) and not args.force:
        raise UsageError(f"Output directory {out_dir} is not empty; pass --force to overwrite.")

    m_values = sorted(int(m) for m in raw.pop("M_values", []))
    epsilon = float(raw.pop("epsilon", DEFAULT_EPSILON))
    samples_per_region = int(raw.pop("samples_per_region", DEFAULT_SAMPLES_PER_REGION))
    search_overrides = raw.pop("search", {})
    configured_workers = raw.pop("max_workers", None)
    if configured_workers is None:
        configured_workers = env_or_config("SWEEP_MAX_WORKERS", "sweep.max_workers", 2, int)
    max_workers = args.max_workers or require_int(configured_workers, "sweep.max_workers")
    for section, keys, allowed in (
        ("sweep", raw, TrainConfig.__dataclass_fields__),
        ("search", search_overrides, SearchConfig.__dataclass_fields__),
    ):
        unknown = sorted(set(keys) - set(allowed))
        if unknown:
            raise UsageError(f"Unknown {section} keys in {config_path}: {', '.join(unknown)}")
    train_cfg = TrainConfig.from_config(**raw)
    search_cfg = SearchConfig.from_config(**search_overrides)
    instance_seed = derive_seed(train_cfg.seed, "instance")
    inst = sample_obstruction(train_cfg.d, train_cfg.n, train_cfg.k, epsilon, samples_per_region, instance_seed)

    run_config = RunConfig(
        "train-sweep",
        {
            "train": train_cfg.to_dict(),
            "search": asdict(search_cfg),
            "M_values": m_values,
            "epsilon": epsilon,
            "samples_per_region": samples_per_region,
            "max_workers": max_workers,
        },
        seeds={"seed": train_cfg.seed, "instance": instance_seed, "dataset": derive_seed(train_cfg.seed, "dataset")},
        config_file=str(config_path),
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "config.json", run_config.to_dict())

    result = LatentSweepRunner(train_cfg, inst, search_cfg, max_workers, log).run(m_values)
    write_csv(out_dir / "sweep.csv", CSV_COLUMNS, result.rows())
    write_json(out_dir / "sweep.json", {"csv_version": CSV_VERSION, "instance": inst.to_dict(), **result.to_dict()})
    incomplete = [record.M for record in result.records if record.status == "error"]
    if incomplete:
        log(f"[warn] Records crashed for M={incomplete}")
        return 1
    log(f"[done] Wrote {len(result.records)} rows to {out_dir / 'sweep.csv'}")
    return 0


def _add_search_flags(parser):
    parser.add_argument("--restarts", type=positive_int, default=None, help="Random restarts of the sphere search.")
    parser.add_argument("--max-iterations", type=positive_int, default=None, help="Descent iterations per restart.")
    parser.add_argument("--tol", type=float, default=None, help="Residual tolerance ||F(u) - F(-u)||^2.")
    parser.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="Sphere radius around the cube centre.")
    parser.add_argument("--random-seed", type=int, default=DEFAULT_SEED, help="Run seed expanded into component seeds.")
    parser.add_argument("--hidden-widths", type=widths, default=None, help="Hidden widths of random encoders, e.g. 8,8.")
    parser.add_argument("--out", default="", help="Output JSON path.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="janossy-bounds", description="Latent-dimension bounds for Deep Sets and Janossy pooling.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    bounds_parser = subparsers.add_parser("bounds", help="Write the lower/upper bounds table as CSV.")
    bounds_parser.add_argument("--d-range", type=parse_range, required=True, help="Point dimensions, e.g. 1..4.")
    bounds_parser.add_argument("--n-range", type=parse_range, required=True, help="Set sizes, e.g. 2..10.")
    bounds_parser.add_argument("--k-range", type=parse_range, required=True, help="Tuple arities, e.g. 1..3.")
    bounds_parser.add_argument("--p", type=positive_int, default=1, help="Output dimension for the trivial bound.")
    bounds_parser.add_argument("--out", default="", help="CSV path (default: <output dir>/bounds.csv).")
    bounds_parser.set_defaults(handler=cmd_bounds)

    cover_parser = subparsers.add_parser("cover-check", help="Monte Carlo check of the simplex sphere cover.")
    cover_parser.add_argument("--b", type=positive_int, required=True, help="Ambient dimension of S^{b-1}.")
    cover_parser.add_argument("--samples", type=positive_int, default=100000)
    cover_parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    cover_parser.set_defaults(handler=cmd_cover_check)

    rigidity_parser = subparsers.add_parser("rigidity-check", help="Finite-difference rigidity of random indexed encoders.")
    rigidity_parser.add_argument("--d", type=positive_int, required=True)
    rigidity_parser.add_argument("--n", type=positive_int, required=True)
    rigidity_parser.add_argument("--k", type=positive_int, required=True)
    rigidity_parser.add_argument("--M", type=positive_int, required=True)
    rigidity_parser.add_argument("--encoders", type=positive_int, default=None)
    rigidity_parser.add_argument("--tails", type=positive_int, default=None)
    rigidity_parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    rigidity_parser.add_argument("--tolerance", type=float, default=RIGIDITY_TOL)
    rigidity_parser.add_argument("--hidden-widths", type=widths, default=None)
    rigidity_parser.add_argument("--negative-control", action="store_true", help="Also run the non-rigid product map.")
    rigidity_parser.set_defaults(handler=cmd_rigidity_check)

    collision_parser = subparsers.add_parser("collision-find", help="Search for an antipodal latent collision.")
    collision_parser.add_argument("--d", type=positive_int)
    collision_parser.add_argument("--n", type=positive_int)
    collision_parser.add_argument("--k", type=positive_int)
    collision_parser.add_argument("--M", type=positive_int)
    collision_parser.add_argument("--kind", choices=ENCODER_KINDS, default="indexed_janossy")
    collision_parser.add_argument("--encoder-file", default="", help="Encoder or model JSON to attack.")
    collision_parser.add_argument("--affine", action="store_true", help="Random encoder with affine member networks.")
    collision_parser.add_argument("--samples-per-region", type=positive_int, default=DEFAULT_SAMPLES_PER_REGION)
    collision_parser.add_argument("--verify", default="", help="Re-verify a stored certificate JSON and exit.")
    _add_search_flags(collision_parser)
    collision_parser.set_defaults(handler=cmd_collision_find)

    fixed_parser = subparsers.add_parser("fixed-feature", help="Collision of a fixed shared encoder on the labeled copy.")
    fixed_parser.add_argument("--d", type=positive_int, required=True)
    fixed_parser.add_argument("--n", type=positive_int, required=True)
    fixed_parser.add_argument("--k", type=positive_int, default=1)
    fixed_parser.add_argument("--M", type=positive_int, required=True)
    fixed_parser.add_argument("--kind", choices=SHARED_KINDS, default="deep_sets")
    _add_search_flags(fixed_parser)
    fixed_parser.set_defaults(handler=cmd_fixed_feature)

    sweep_parser = subparsers.add_parser("train-sweep", help="Train and attack one model per latent dimension.")
    sweep_parser.add_argument("--config", required=True, help="Sweep JSON (dims, M_values, training and search overrides).")
    sweep_parser.add_argument("--out", default="", help="Output directory (default: <output dir>/sweep).")
    sweep_parser.add_argument("--force", action="store_true", help="Overwrite a non-empty output directory.")
    sweep_parser.add_argument("--max-workers", type=positive_int, default=None)
    sweep_parser.set_defaults(handler=cmd_train_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        return args.handler(args)
    except UsageError as exc:
        log(f"[error] {exc}")
        parser.print_usage(sys.stderr)
        return 2
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        log(f"[error] {exc}")
        return 2
    except (NonFiniteError, RuntimeError) as exc:
        log(f"[error] {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
