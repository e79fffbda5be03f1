"""The ``certlab`` command line.

Exit codes: 0 for success or an "equal" verdict, 1 for a "far" verdict,
2 for bad input, 3 when an internal check fails.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile

import numpy as np

from certlab import __version__
from certlab.bucketing import lower_bucketing, upper_bucketing
from certlab.certifier import FAR, CertifierConfig, HSOracleSpec, certify
from certlab.complexity import lower_report
from certlab.errors import CertlabError, InputError
from certlab.haar import RngSeed, sample_haar, verify_mgf_bound
from certlab.instances import (classical_paninski, classical_paninski_family, nearly_mixed, nearly_mixed_family,
                               quantum_paninski, quantum_paninski_family, rotation_instance, signed_diagonal,
                               two_by_two_sign, two_by_two_sign_family)
from certlab.io import RunManifest, manifest_path, parse_state_or_spectrum, replay, report_text, write_text
from certlab.linalg import DEFAULT_TOL, DensityMatrix, quantum_chi2

EXIT_OK, EXIT_FAR, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3
SEED_ENV = "CERTLAB_SEED"
DEFAULT_SEED = 0
ANALYZE_EPS = 1.0 / 24.0
SWEEP_DEFAULTS = {"d": "4,8,16,32,64", "eps": "0.041666666666666664,0.03125,0.020833333333333332,0.015625,0.010416666666666666"}
INSTANCE_KINDS = ("quantum_paninski", "nearly_mixed", "rotation", "two_by_two_sign", "classical_paninski")
DIVERGENCE_FAMILIES = ("quantum_paninski", "nearly_mixed", "classical_paninski", "two_by_two_sign")
DIVERGENCE_MODES = ("exact", "monte_carlo", "exp_upper", "tensor")


class _Outcome:
    """What a subcommand produced: report text, files it read, and its exit code."""

    def __init__(self, text: str, code: int = EXIT_OK, inputs=(), summary: str | None = None):
        self.text = text
        self.code = code
        self.inputs = list(inputs)
        self.summary = summary


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help=f"random seed (default: ${SEED_ENV} or {DEFAULT_SEED})")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="validation tolerance")
    p.add_argument("--eps", type=float, default=None, help="distance parameter")
    p.add_argument("--delta", type=float, default=0.1, help="failure probability")
    p.add_argument("--samples", type=int, default=None, help="Monte Carlo sample count")
    p.add_argument("--out", default=None, help="output file; a run manifest is written next to it")
    p.add_argument("--format", choices=("json", "csv"), default=None, help="output format")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="certlab", description="Instance-optimal quantum state certification lab.")
    parser.add_argument("--version", action="version", version=f"certlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="copy-complexity functionals of a state")
    p.add_argument("--sigma", help="density or spectrum file")
    p.add_argument("--sweep", choices=("d", "eps"), help="sweep dimension or eps and emit a CSV")
    p.add_argument("--values", help="comma-separated sweep values")
    p.add_argument("--family", choices=("flat", "two_scale", "geometric"), default="flat",
                   help="spectrum family for dimension sweeps")
    p.set_defaults(run=cmd_analyze)

    p = sub.add_parser("bucket", parents=[common], help="bucket a spectrum")
    p.add_argument("--sigma", required=True)
    p.add_argument("--scheme", choices=("lower", "upper"), default="lower")
    p.set_defaults(run=cmd_bucket)

    p = sub.add_parser("instance", parents=[common], help="generate a hard instance as a density file")
    p.add_argument("--kind", choices=INSTANCE_KINDS, required=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--sigma")
    p.add_argument("--sign", type=int, choices=(1, -1), default=1, help="sign for two_by_two_sign")
    p.set_defaults(run=cmd_instance)

    p = sub.add_parser("divergence", parents=[common], help="chi-square divergence of a family or a pair")
    p.add_argument("--family", choices=DIVERGENCE_FAMILIES)
    p.add_argument("--dim", type=int)
    p.add_argument("--sigma")
    p.add_argument("--rho", help="with --sigma, the chi-square divergence of one state from another")
    p.add_argument("--n", type=float, default=1, help="number of copies")
    p.add_argument("--mode", choices=DIVERGENCE_MODES, default="exact")
    p.add_argument("--discretize", type=int, default=None, help="support size when a Haar family must be finite")
    p.set_defaults(run=cmd_divergence)

    p = sub.add_parser("certify", parents=[common], help="simulate certification of rho against sigma")
    p.add_argument("--sigma", required=True)
    p.add_argument("--rho", required=True)
    p.add_argument("--oracle", default="ideal", help="ideal, statistical or noisy:p")
    p.add_argument("--exact", action="store_true", help="replace every random outcome by its expectation")
    p.set_defaults(run=cmd_certify)

    p = sub.add_parser("haar", help="Haar-measure checks")
    hsub = p.add_subparsers(dest="haar_command", required=True)
    hp = hsub.add_parser("verify", parents=[common], help="Monte Carlo check of the MGF bound")
    hp.add_argument("--dim", type=int, default=8)
    hp.add_argument("--t", type=float, default=0.3)
    hp.add_argument("--diag", help="comma-separated traceless diagonal (default: alternating -1, +1)")
    hp.set_defaults(run=cmd_haar_verify)

    p = sub.add_parser("corpus", help="certifier acceptance corpus")
    csub = p.add_subparsers(dest="corpus_command", required=True)
    cp = csub.add_parser("run", parents=[common], help="run every corpus cell and emit a CSV summary")
    cp.add_argument("--runs", type=int, default=100)
    cp.add_argument("--oracle", default="ideal")
    cp.set_defaults(run=cmd_corpus_run)

    p = sub.add_parser("verify-all", parents=[common], help="run the verification battery")
    p.add_argument("--level", choices=("quick", "full"), default="quick")
    p.add_argument("--fault", default=None, help=argparse.SUPPRESS)
    p.set_defaults(run=cmd_verify_all)

    p = sub.add_parser("replay", help="re-run a manifest and compare outputs bit for bit")
    p.add_argument("manifest")
    p.set_defaults(run=cmd_replay)
    return parser


def resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get(SEED_ENV)
    if env is None:
        return DEFAULT_SEED
    try:
        return int(env)
    except ValueError:
        raise InputError(f"{SEED_ENV}={env!r} is not an integer") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from None


def _fmt(args, default: str = "json") -> str:
    return args.format or default


def _state(path, args) -> DensityMatrix:
    return parse_state_or_spectrum(path, args.tol)


def _require(value, flag: str):
    if value is None:
        raise InputError(f"{flag} is required here")
    return value


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _sweep_spectrum(family: str, d: int) -> np.ndarray:
    if family == "flat":
        return np.full(d, 1.0 / d)
    if family == "two_scale":
        v = np.full(d, 1.0)
        v[-1] = 1.0 / d
        return v / v.sum()
    v = 0.5 ** np.arange(d)
    return v / v.sum()


def cmd_analyze(args, seed) -> _Outcome:
    eps = ANALYZE_EPS if args.eps is None else args.eps
    if args.sweep is None:
        sigma = _state(_require(args.sigma, "--sigma"), args)
        rep = lower_report(np.asarray(sigma.spectrum().values), eps)
        return _Outcome(report_text(rep, _fmt(args)), inputs=[args.sigma])
    values = _floats(args.values or SWEEP_DEFAULTS[args.sweep])
    rows, inputs = [], []
    if args.sweep == "eps" and args.sigma:
        base = np.asarray(_state(args.sigma, args).spectrum().values)
        inputs.append(args.sigma)
    for v in values:
        if args.sweep == "d":
            d = int(v)
            if d != v or d < 1:
                raise InputError(f"sweep dimension must be a positive integer, got {v!r}")
            lam, e = _sweep_spectrum(args.family, d), eps
        else:
            lam = base if args.sigma else np.full(16, 1.0 / 16)
            e = v
        rep = lower_report(lam, e)
        rows.append({
            "parameter": args.sweep, "value": v, "dim": rep.dim, "eps": e,
            "lower_best": rep.lower_best, "lower_tuned": rep.lower_tuned, "lower_classical": rep.lower_classical,
            "lower_corner": rep.lower_corner, "lower_nearly_mixed": rep.lower_nearly_mixed, "upper": rep.upper,
            "branch": rep.regime_flags.branch, "quasinorm_sigma": rep.quasinorm_sigma,
        })
    return _Outcome(report_text(rows, _fmt(args, "csv")), inputs=inputs)


def cmd_bucket(args, seed) -> _Outcome:
    sigma = _state(args.sigma, args)
    lam = np.asarray(sigma.spectrum().values)
    if args.scheme == "lower":
        b = lower_bucketing(lam, ANALYZE_EPS if args.eps is None else args.eps)
    else:
        b = upper_bucketing(lam, 0.25 if args.eps is None else args.eps)
    return _Outcome(report_text(b, _fmt(args)), inputs=[args.sigma])


def cmd_instance(args, seed) -> _Outcome:
    eps = _require(args.eps, "--eps")
    gen = RngSeed(seed).generator()
    inputs = [args.sigma] if args.sigma else []
    if args.kind in ("quantum_paninski", "classical_paninski"):
        d = _require(args.dim, "--dim")
        if args.kind == "quantum_paninski":
            rho = quantum_paninski(d, eps, sample_haar(d, gen).matrix)
        else:
            theta = gen.choice([-1.0, 1.0], size=d // 2)
            rho = DensityMatrix(np.diag(classical_paninski(d, eps, theta)).astype(complex))
    else:
        sigma = _state(_require(args.sigma, "--sigma"), args)
        if args.kind == "nearly_mixed":
            rho = nearly_mixed(sigma, eps, sample_haar(sigma.dim, gen).matrix)
        elif args.kind == "rotation":
            rho = rotation_instance(sigma, eps)
        else:
            rho = two_by_two_sign(sigma, eps, args.sign)
    return _Outcome(report_text(rho, "json"), inputs=inputs)


def _divergence_family(args):
    eps = _require(args.eps, "--eps")
    if args.family == "quantum_paninski":
        return quantum_paninski_family(_require(args.dim, "--dim"), eps)
    if args.family == "classical_paninski":
        return classical_paninski_family(_require(args.dim, "--dim"), eps)
    sigma = _state(_require(args.sigma, "--sigma"), args)
    if args.family == "nearly_mixed":
        return nearly_mixed_family(sigma, eps)
    return two_by_two_sign_family(sigma, eps)


def cmd_divergence(args, seed) -> _Outcome:
    from certlab import divergence as dv

    if args.rho is not None:
        rho, sigma = _state(args.rho, args), _state(_require(args.sigma, "--sigma"), args)
        value = quantum_chi2(rho, sigma, args.tol)
        est = dv.DivergenceEstimate(value, dv.EXACT, 1)
        return _Outcome(report_text(est, _fmt(args)), inputs=[args.rho, args.sigma])
    fam = _divergence_family(_require_family(args))
    samples = args.samples or dv.DEFAULT_SAMPLES
    gen = RngSeed(seed).generator()
    n = args.n
    if args.mode in ("exact", "tensor") and not fam.finite:
        fam = fam.discretize(_require(args.discretize, "--discretize"), gen)
    if args.mode in ("exact", "tensor", "monte_carlo") and n != int(n):
        raise InputError(f"--n must be an integer in {args.mode} mode, got {n!r}")
    if args.mode == "exact":
        est = dv.chi2_kernel(fam, n=int(n))
    elif args.mode == "tensor":
        est = dv.chi2_tensor_exact(fam, n=int(n))
    elif args.mode == "monte_carlo":
        est = dv.chi2_kernel(fam, n=int(n), mode=dv.MONTE_CARLO, samples=samples, rng=gen)
    else:
        est = dv.chi2_exp_upper(fam, n=n, samples=samples, rng=gen)
    inputs = [args.sigma] if args.sigma else []
    return _Outcome(report_text(est, _fmt(args)), inputs=inputs)


def _require_family(args):
    _require(args.family, "--family (or --rho with --sigma)")
    return args


def cmd_certify(args, seed) -> _Outcome:
    sigma, rho = _state(args.sigma, args), _state(args.rho, args)
    if sigma.dim != rho.dim:
        raise InputError(f"sigma is {sigma.dim}-dimensional but rho is {rho.dim}-dimensional")
    cfg = CertifierConfig(eps=_require(args.eps, "--eps"), delta=args.delta, oracle=HSOracleSpec.parse(args.oracle),
                          seed=RngSeed(seed), exact=args.exact)
    res = certify(rho.matrix, sigma.matrix, cfg)
    report = {"verdict": res.verdict, "ledger": res.ledger.as_dict(), "case_trace": res.case_trace,
              "m": res.m, "repetitions": res.repetitions}
    return _Outcome(report_text(report, "json"), EXIT_FAR if res.verdict == FAR else EXIT_OK,
                    inputs=[args.sigma, args.rho], summary=f"verdict: {res.verdict}")


def cmd_haar_verify(args, seed) -> _Outcome:
    diag = np.asarray(_floats(args.diag)) if args.diag else signed_diagonal(args.dim, 1.0)
    res = verify_mgf_bound(args.dim, diag, args.t, args.samples or 10_000, RngSeed(seed).generator())
    return _Outcome(report_text(res, _fmt(args)), EXIT_OK if res.passed else EXIT_INTERNAL,
                    summary=f"mgf check: {'pass' if res.passed else 'FAIL'}")


def cmd_corpus_run(args, seed) -> _Outcome:
    from certlab.corpus import DEFAULT_EPS, ledger_slope, run_corpus

    results = run_corpus(runs=args.runs, eps=DEFAULT_EPS if args.eps is None else args.eps, delta=args.delta,
                         oracle=HSOracleSpec.parse(args.oracle), seed=seed)
    rows = [{"state": r.state, "dim": r.dim, "cell": r.cell, "runs": r.runs, "correct": r.correct,
             "accuracy": r.accuracy, "mean_copies": r.mean_copies, "quasinorm_star": r.quasinorm_star,
             "m": r.m, "repetitions": r.repetitions, "trichotomy": r.trichotomy} for r in results]
    worst = min(r.accuracy for r in results)
    slope = ledger_slope(results)
    ok = worst >= 0.95 and all(r.trichotomy is not False for r in results)
    return _Outcome(report_text(rows, _fmt(args, "csv")), EXIT_OK if ok else EXIT_INTERNAL,
                    summary=f"worst cell accuracy {worst:.2f}; ledger slope {slope:.4f}")


def cmd_verify_all(args, seed) -> _Outcome:
    from certlab.verify import verify_all

    suite = verify_all(seed=seed, level=args.level, fault=args.fault)
    code = EXIT_OK if suite.passed else EXIT_INTERNAL
    if args.out:
        return _Outcome(report_text(suite, _fmt(args)), code, summary=suite.table())
    return _Outcome(suite.table() + "\n", code)


def cmd_replay(args, seed) -> _Outcome:
    with tempfile.TemporaryDirectory() as tmp:
        res = replay(args.manifest, tmp)
    text = "identical\n" if res.identical else "MISMATCH: " + ", ".join(res.mismatches) + "\n"
    return _Outcome(text, EXIT_OK if res.identical else EXIT_INTERNAL, inputs=[])


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        seed = resolve_seed(args)
        outcome = args.run(args, seed)
        out = getattr(args, "out", None)
        if out and args.command != "replay":
            write_text(out, outcome.text)
            RunManifest.build(argv, seed, outcome.inputs, [out]).write(manifest_path(out))
            if outcome.summary:
                print(outcome.summary)
        else:
            sys.stdout.write(outcome.text)
        return outcome.code
    except CertlabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # anything unplanned is an internal failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
