"""Command-line front end.

Every command takes ``--seed``, ``--out`` and ``--manifest``. Randomized
commands refuse to run without an explicit seed. A human-readable summary
goes to stdout; machine artifacts are written only to ``--out``. Exit codes:
0 success, 1 domain error (or a failed check), 2 usage error.

``--manifest PATH`` records the invocation, input hashes and output hashes;
``replay PATH`` re-runs it into a scratch directory and compares bytes.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .bench import BenchConfig, run_benchmark
from .decode import DecodeOptions, decode_set, match_hungarian
from .decode1d import FieldConfig1D, FrbPrior, decode_lightcurve, encode_lightcurve, simulate_frb, time_grid
from .encode import ObjectSet, encode_field
from .errors import SetFieldError, UnsupportedOperation
from .kernels import FAMILIES, KernelSpec, gaussian_gram, kernel_matrix
from .rng import child_seed
from .sampling import SamplerConfig

# arguments that name where artifacts go; they do not change artifact contents
_LOCATION_ARGS = ("out", "manifest", "trace")
TRACE_KEY = "<trace>"


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (math.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("expected a value in [0, 1]")
    return v


# ---------------------------------------------------------------------------
# helpers


class Run:
    """Collects inputs and outputs of one command for the manifest."""

    def __init__(self, args):
        self.args = args
        self.inputs: dict = {}
        self.outputs: dict = {}
        self.kernel = self.sampler = self.decode = None

    def manifest(self) -> io.RunManifest:
        recorded = {k: v for k, v in vars(self.args).items()
                    if k not in _LOCATION_ARGS and k != "func" and v is not None}
        return io.RunManifest(self.args.command, recorded, self.args.seed, self.kernel, self.sampler,
                              self.decode, input_hashes=dict(self.inputs), output_hashes=dict(self.outputs))

    def read_input(self, path: str) -> Path:
        p = Path(path)
        if not p.is_file():
            raise SetFieldError(f"input file not found: {path}")
        self.inputs[path] = io.sha256_file(p)
        return p

    def out_key(self, path: Path) -> str:
        root = Path(self.args.out)
        return str(path.relative_to(root)) if path != root else root.name

    def write_json(self, value, path: Path):
        io.ensure_parent(path)
        h = io.write_json(value, path, {"manifest_hash": self.manifest().hash})
        self.outputs[self.out_key(path)] = h

    def write_text(self, text: str, path: Path, key: Optional[str] = None):
        io.ensure_parent(path)
        data = text.encode()
        path.write_bytes(data)
        self.outputs[key or self.out_key(path)] = io.sha256_bytes(data)


def _require_seed(args):
    if args.seed is None:
        raise argparse.ArgumentTypeError(f"{args.command} is randomized and needs an explicit --seed")


def _load_objects(run: Run, path: str) -> ObjectSet:
    p = run.read_input(path)
    if p.suffix == ".csv":
        return io.read_objects_csv(p)
    return io.read_json(p, "ObjectSet")


def _load_samples(run: Run, path: str):
    p = run.read_input(path)
    if p.suffix == ".csv":
        return io.read_samples_csv(p)
    return io.read_json(p, "FieldSamples")


def _kernel(args, dim: int) -> KernelSpec:
    return KernelSpec(args.family, args.sigma, dim)


def _sampler(args) -> SamplerConfig:
    return SamplerConfig(scheme=args.scheme, proposal_sigma=args.proposal_sigma,
                         temperature=args.temperature, importance_fraction=args.importance_fraction,
                         weight_mode=args.weight_mode)


def _options(args) -> DecodeOptions:
    return DecodeOptions(bic_search=not args.no_bic, fit_amplitude=not args.fixed_amplitude,
                         log_space=args.log_space, tikhonov=args.tikhonov)


def _fmt_row(values) -> str:
    return "  ".join(f"{v: .6e}" for v in values)


# ---------------------------------------------------------------------------
# commands


def cmd_encode(args, run: Run) -> int:
    _require_seed(args)
    objects = _load_objects(run, args.input)
    spec = _kernel(args, objects.dim)
    sampler = _sampler(args)
    run.kernel, run.sampler = spec.to_dict(), sampler.to_dict()
    samples = encode_field(objects, spec, sampler, args.samples, args.seed)
    mass = float(samples.density @ samples.weights)
    print(f"encoded {objects.n} objects into {samples.m} samples ({samples.scheme}); weighted mass {mass:.6f}")
    if args.out:
        run.write_json(samples, Path(args.out))
    return 0


def cmd_decode(args, run: Run) -> int:
    _require_seed(args)
    samples = _load_samples(run, args.input)
    spec = _kernel(args, samples.dim)
    opts = _options(args)
    run.kernel, run.decode = spec.to_dict(), opts.to_dict()
    res = decode_set(samples, spec, opts, args.seed)
    print(f"count {res.count} (mass {res.raw_mass:.6f}); residual {res.residual:.3e}; "
          f"gram condition {res.gram_condition:.3e}")
    for c in res.centers:
        print("  center", _fmt_row(c))
    if args.out:
        run.write_json(res, Path(args.out))
    if args.trace:
        rows = "".join(f"{i},{v!r},{g!r}\n" for i, v, g in res.diagnostics.get("lbfgs_trace", []))
        run.write_text("iteration,value,grad_norm\n" + rows, Path(args.trace), key=TRACE_KEY)
    return 0


def cmd_roundtrip(args, run: Run) -> int:
    _require_seed(args)
    objects = _load_objects(run, args.input)
    spec = _kernel(args, objects.dim)
    sampler = _sampler(args)
    opts = _options(args)
    run.kernel, run.sampler, run.decode = spec.to_dict(), sampler.to_dict(), opts.to_dict()
    if objects.n == 0:
        # the zero field has zero mass under any sampler; there is nothing to locate
        count, centers, feats, mass = 0, np.zeros((0, objects.dim)), np.zeros((0, objects.n_features)), 0.0
    else:
        samples = encode_field(objects, spec, sampler, args.samples, args.seed)
        res = decode_set(samples, spec, opts, args.seed)
        count, centers, feats, mass = res.count, res.centers, res.features, res.raw_mass
    exact = count == objects.n
    values = {"n_true": objects.n, "count": count, "raw_mass": mass, "count_exact": exact,
              "position_rmse": None, "position_rmse_sigma": None, "feature_max_rel_error": None,
              "assigned_distances": []}
    if exact and count:
        pi, ti = match_hungarian(centers, objects.positions)
        d = np.linalg.norm(centers[pi] - objects.positions[ti], axis=1)
        rmse = float(np.sqrt(np.mean(d ** 2)))
        values.update(position_rmse=rmse, position_rmse_sigma=rmse / spec.sigma, assigned_distances=d.tolist())
        if objects.n_features:
            num = np.linalg.norm(feats[pi] - objects.features[ti], axis=1)
            den = np.maximum(np.linalg.norm(objects.features[ti], axis=1), np.finfo(float).tiny)
            values["feature_max_rel_error"] = float(np.max(num / den))
    print(f"count_exact={str(exact).lower()} count={count} n_true={objects.n} mass={mass:.6f}")
    if values["position_rmse"] is not None:
        print(f"position_rmse={values['position_rmse']:.6e} ({values['position_rmse_sigma']:.3e} sigma)")
    if values["feature_max_rel_error"] is not None:
        print(f"feature_max_rel_error={values['feature_max_rel_error']:.6e}")
    if args.out:
        run.write_json(io.Report("roundtrip", values), Path(args.out))
    return 0 if exact else 1


def cmd_sim_frb(args, run: Run) -> int:
    _require_seed(args)
    prior = FrbPrior(min_onset_separation=args.min_separation)
    cfg = FieldConfig1D(prior.n_grid, args.sigma_rho, args.sigma_feat)
    times = time_grid(prior.n_grid)
    root = Path(args.out) if args.out else None
    for i in range(args.n):
        bursts, counts = simulate_frb(child_seed(args.seed, i), prior, args.components)
        print(f"light curve {i}: {bursts.n} bursts at t0 = "
              + ", ".join(f"{t:.4f}" for t in np.sort(bursts.t0)))
        if root is not None:
            stem = f"lc_{i:04d}"
            run.write_json(bursts, root / f"{stem}.bursts.json")
            run.write_json(encode_lightcurve(bursts, cfg), root / f"{stem}.field.json")
            rows = "".join(f"{t!r},{int(c)}\n" for t, c in zip(times, counts))
            run.write_text("t,count\n" + rows, root / f"{stem}.counts.csv")
    return 0


def cmd_decode_1d(args, run: Run) -> int:
    fld = io.read_json(run.read_input(args.input), "GridField1D")
    res = decode_lightcurve(fld)
    print(f"count {res.count} (mass {res.raw_mass:.6f}){'; shortfall' if res.shortfall else ''}")
    for j, t in enumerate(res.onsets):
        print(f"  t0 {t:.6f}  features " + _fmt_row(res.log_features[j])
              + ("  [edge]" if res.edge_flags[j] else ""))
    if args.out:
        run.write_json(res, Path(args.out))
    return 0


def cmd_bench_maxima(args, run: Run) -> int:
    _require_seed(args)
    cfg = BenchConfig(lengthscale=args.lengthscale, sigma=args.sigma, decoder=args.decoder, timing=args.timing)
    run.decode = DecodeOptions().to_dict()
    report = run_benchmark(args.instances, cfg, args.seed)
    n_ok = sum(r["correct"] for r in report.rows)
    print(f"accuracy {report.accuracy:.4f} ({n_ok}/{len(report.rows)}) at lengthscale {cfg.lengthscale}")
    if args.out:
        text = f"# manifest_hash={run.manifest().hash}\n" + report.to_csv()
        run.write_text(text, Path(args.out))
    return 0


def cmd_gram_check(args, run: Run) -> int:
    _require_seed(args)
    centers = _load_objects(run, args.centers)
    if centers.n < 1:
        raise SetFieldError("gram-check needs at least one center")
    if args.family != "gaussian":
        raise UnsupportedOperation("the analytic Gram is only available for the Gaussian kernel")
    spec = KernelSpec("gaussian", args.sigma, centers.dim)
    run.kernel = spec.to_dict()
    exact = gaussian_gram(spec, centers.positions)
    eig = np.linalg.eigvalsh(exact)
    cond = float(eig[-1] / eig[0]) if eig[0] > 0 else math.inf
    deficient = bool(eig[0] <= 1e-10 * eig[-1])
    print(f"analytic Gram: {centers.n}x{centers.n}, min eigenvalue {eig[0]:.6e}, condition {cond:.6e}"
          + ("  [rank deficient]" if deficient else ""))
    sweep = []
    for m in args.mc_samples:
        samples = encode_field(ObjectSet(centers.positions), spec, SamplerConfig(), m, args.seed)
        k = kernel_matrix(spec, samples.points, centers.positions)
        mc = k.T @ (k * samples.weights[:, None])
        err = float(np.linalg.norm(mc - exact))
        sweep.append({"mc_samples": m, "frobenius_error": err, "mc_gram": mc.tolist(),
                      "mc_min_eigenvalue": float(np.linalg.eigvalsh(mc)[0])})
        print(f"M={m:>8d}  ||G_mc - G||_F = {err:.6e}")
    if centers.n <= 6:
        print("analytic entries:")
        for row in exact:
            print("  " + _fmt_row(row))
    values = {"analytic_gram": exact.tolist(), "min_eigenvalue": float(eig[0]),
              "condition": cond if math.isfinite(cond) else None, "rank_deficient": deficient, "sweep": sweep}
    if len(sweep) >= 2:
        ms = np.log([s["mc_samples"] for s in sweep])
        es = np.log([max(s["frobenius_error"], np.finfo(float).tiny) for s in sweep])
        values["loglog_slope"] = float(np.polyfit(ms, es, 1)[0])
        print(f"log-log slope {values['loglog_slope']:.3f}")
    if args.out:
        run.write_json(io.Report("gram-check", values), Path(args.out))
    return 0


def cmd_replay(args, run: Run) -> int:
    manifest = io.read_json(run.read_input(args.input), "RunManifest")
    for path, h in manifest.input_hashes.items():
        if not Path(path).is_file() or io.sha256_file(path) != h:
            raise SetFieldError(f"input {path} is missing or has changed since the manifest was written")
    with tempfile.TemporaryDirectory() as tmp:
        argv = _argv_from(manifest)
        names = [k for k in manifest.output_hashes if k != TRACE_KEY]
        out = Path(tmp) / (names[0] if names and manifest.command != "sim-frb" else "out")
        if set(manifest.output_hashes) - {TRACE_KEY}:
            argv += ["--out", str(out)]
        if TRACE_KEY in manifest.output_hashes:
            argv += ["--trace", str(Path(tmp) / "trace.csv")]
        sub = build_parser().parse_args(argv)
        sub_run = Run(sub)
        code = sub.func(sub, sub_run)
        if sub_run.manifest().hash != manifest.hash:
            print("replay: manifest hash differs (tool version or arguments changed)")
            return 1
        bad = sorted(k for k in set(manifest.output_hashes) | set(sub_run.outputs)
                     if manifest.output_hashes.get(k) != sub_run.outputs.get(k))
    for k in bad:
        print(f"replay: output {k} differs")
    if not bad:
        print(f"replay: {len(manifest.output_hashes)} artifacts byte-identical (manifest {manifest.hash[:12]})")
    return 1 if bad else code


def _argv_from(manifest: io.RunManifest) -> list:
    """Rebuild a command line from recorded (non-location) arguments."""
    parser = build_parser()
    sub = parser._subcommands[manifest.command]
    argv = [manifest.command]
    for action in sub._actions:
        if action.dest not in manifest.args or action.dest in ("command",) or not action.option_strings:
            continue
        value = manifest.args[action.dest]
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                argv.append(flag)
        elif isinstance(value, list):
            argv += [flag] + [str(v) for v in value]
        else:
            argv += [flag, repr(value) if isinstance(value, float) else str(value)]
    return argv


# ---------------------------------------------------------------------------
# parser


def _common(p, out_help="artifact path"):
    p.add_argument("--seed", type=int, default=None, help="random seed (required by randomized commands)")
    p.add_argument("--out", default=None, help=out_help)
    p.add_argument("--manifest", default=None, help="write a replayable run manifest here")


def _kernel_args(p):
    p.add_argument("--sigma", type=_positive_float, required=True, help="kernel bandwidth")
    p.add_argument("--family", choices=FAMILIES, default="gaussian")


def _sampler_args(p):
    p.add_argument("--samples", type=_positive_int, default=4096, help="number of sample locations M")
    p.add_argument("--scheme", choices=("importance", "uniform"), default="importance")
    p.add_argument("--proposal-sigma", type=_positive_float, default=None)
    p.add_argument("--temperature", type=_positive_float, default=1.0)
    p.add_argument("--importance-fraction", type=_fraction, default=1.0)
    p.add_argument("--weight-mode", choices=("exact", "unnormalized"), default="exact")


def _decode_args(p):
    p.add_argument("--no-bic", action="store_true", help="skip the mixture-size search")
    p.add_argument("--fixed-amplitude", action="store_true", help="do not fit a global amplitude")
    p.add_argument("--log-space", action="store_true", help="match log densities")
    p.add_argument("--tikhonov", type=float, default=1e-4, help="relative ridge on the Gram matrix")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="setfield", description="Set <-> field codec toolkit")
    subs = parser.add_subparsers(dest="command", required=True)
    table = {}

    p = subs.add_parser("encode", help="sample the fields of an object set")
    p.add_argument("--in", dest="input", required=True, help="ObjectSet (.json or .csv)")
    _kernel_args(p)
    _sampler_args(p)
    _common(p, "FieldSamples JSON")
    p.set_defaults(func=cmd_encode)
    table["encode"] = p

    p = subs.add_parser("decode", help="decode sampled fields to an object set")
    p.add_argument("--in", dest="input", required=True, help="FieldSamples (.json or .csv)")
    _kernel_args(p)
    _decode_args(p)
    p.add_argument("--trace", default=None, help="write the optimizer trace (iteration, value, grad_norm) as CSV")
    _common(p, "DecodeResult JSON")
    p.set_defaults(func=cmd_decode)
    table["decode"] = p

    p = subs.add_parser("roundtrip", help="encode, sample, decode and compare")
    p.add_argument("--in", dest="input", required=True, help="ObjectSet (.json or .csv)")
    _kernel_args(p)
    _sampler_args(p)
    _decode_args(p)
    _common(p, "report JSON")
    p.set_defaults(func=cmd_roundtrip)
    table["roundtrip"] = p

    p = subs.add_parser("sim-frb", help="simulate burst light curves and their fields")
    p.add_argument("--n", type=_positive_int, default=1, help="number of light curves")
    p.add_argument("--components", type=_positive_int, default=None, help="force this many bursts")
    p.add_argument("--min-separation", type=float, default=0.0, help="minimum onset separation")
    p.add_argument("--sigma-rho", type=_positive_float, default=0.01)
    p.add_argument("--sigma-feat", type=_positive_float, default=0.015)
    _common(p, "output directory")
    p.set_defaults(func=cmd_sim_frb)
    table["sim-frb"] = p

    p = subs.add_parser("decode-1d", help="decode a light-curve field")
    p.add_argument("--in", dest="input", required=True, help="GridField1D JSON")
    _common(p, "LightcurveResult JSON")
    p.set_defaults(func=cmd_decode_1d)
    table["decode-1d"] = p

    p = subs.add_parser("bench-maxima", help="local-maxima benchmark")
    p.add_argument("--instances", type=_positive_int, default=200)
    p.add_argument("--lengthscale", type=_positive_float, default=0.9)
    p.add_argument("--sigma", type=_positive_float, default=0.06, help="encoding bandwidth")
    p.add_argument("--decoder", choices=("codec", "oracle"), default="codec")
    p.add_argument("--timing", action="store_true", help="fill decode_ms (not reproducible)")
    _common(p, "report CSV")
    p.set_defaults(func=cmd_bench_maxima)
    table["bench-maxima"] = p

    p = subs.add_parser("gram-check", help="Monte-Carlo vs analytic Gram matrix")
    p.add_argument("--centers", required=True, help="ObjectSet (.json or .csv)")
    _kernel_args(p)
    p.add_argument("--mc-samples", type=_positive_int, nargs="+", default=[1000, 4000, 16000])
    _common(p, "report JSON")
    p.set_defaults(func=cmd_gram_check)
    table["gram-check"] = p

    p = subs.add_parser("replay", help="re-run a manifest and compare artifacts")
    p.add_argument("input", help="manifest JSON")
    _common(p)
    p.set_defaults(func=cmd_replay)
    table["replay"] = p

    parser._subcommands = table
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = os.environ.get("SETFIELD_THREADS")
    if threads is not None and not threads.isdigit():
        parser.error("SETFIELD_THREADS must be a positive integer")
    run = Run(args)
    try:
        code = args.func(args, run)
    except argparse.ArgumentTypeError as err:
        parser.error(str(err))
    except SetFieldError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    if args.manifest:
        manifest = run.manifest()
        io.ensure_parent(args.manifest)
        Path(args.manifest).write_text(json.dumps(io.to_document(manifest), indent=1) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
