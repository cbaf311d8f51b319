"""Command line front end.

Every subcommand prints a plain-text summary on stdout and, with ``--out``,
writes a JSON document (keys sorted, so identical runs give identical bytes
when ``--no-meta`` drops the timestamp block).  Exit codes: 0 success or PASS,
2 verification FAIL, 1 usage or runtime error.  Errors are printed on stderr as
``error[<code>]: <message>``.
"""
from __future__ import annotations

import argparse
import datetime
import json
import math
import sys

import numpy as np

from . import asymptotics, strips, surgery, words
from .ambient import load_atlas, synth_atlas
from .errors import ConfigError, HandleSurgeryError
from .handle import HandleParams

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
PARAM_FIELDS = ("epsilon", "p", "s", "q", "l", "n")

_META = {"type": "object", "required": ["timestamp", "argv", "version"]}
_NUMBER_OR_NULL = {"type": ["number", "null"]}

# Output document schemas, one per subcommand.
REPORT_SCHEMAS = {
    "enumerate": {
        "type": "object",
        "required": ["words", "cyclic_words", "action_gap"],
        "properties": {
            "words": {"type": "array", "items": {"type": "object", "required": ["word", "action"]}},
            "cyclic_words": {"type": "array", "items": {"type": "object", "required": ["word", "action"]}},
            "action_gap": _NUMBER_OR_NULL,
            "meta": _META,
        },
    },
    "find-chords": {
        "type": "object",
        "required": ["epsilon", "chords"],
        "properties": {"epsilon": {"type": "number"}, "chords": {"type": "array"}, "meta": _META},
    },
    "find-orbits": {
        "type": "object",
        "required": ["epsilon", "orbits"],
        "properties": {"epsilon": {"type": "number"}, "orbits": {"type": "array"}, "meta": _META},
    },
    "verify": {
        "type": "object",
        "required": ["epsilon", "pass", "chords", "orbits", "counts", "misses", "multiplicities",
                     "max_action_deviation", "failure_modes", "action_gap"],
        "properties": {"pass": {"type": "boolean"}, "action_gap": _NUMBER_OR_NULL, "meta": _META},
    },
    "threshold": {
        "type": "object",
        "required": ["epsilon0", "bracket", "scan", "monotone"],
        "properties": {"epsilon0": {"type": "number"}, "meta": _META},
    },
    "spectrum": {
        "type": "object",
        "required": ["eigenvalues", "multiplicities", "grid_size", "error_estimate"],
        "properties": {"eigenvalues": {"type": "array", "items": {"type": "number"}}, "meta": _META},
    },
    "fit-tail": {
        "type": "object",
        "required": ["leading_index", "coefficients", "decay_gap", "residual"],
        "properties": {"leading_index": {"type": "integer", "minimum": 1}, "meta": _META},
    },
    "strip": {
        "type": "object",
        "required": ["variant", "corners", "holomorphicity_residual", "energy"],
        "properties": {"corners": {"type": "integer"}, "meta": _META},
    },
    "probe": {
        "type": "object",
        "required": ["monotonicity", "kernel", "pass"],
        "properties": {"pass": {"type": "boolean"}, "meta": _META},
    },
}


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error[usage]: {message}\n")
        sys.exit(EXIT_ERROR)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def dump_document(doc) -> str:
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _read_json(path: str, what: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {what} {path!r}: {exc}") from exc


def _params(args) -> HandleParams:
    kwargs = {k: getattr(args, k) for k in PARAM_FIELDS if getattr(args, k, None) is not None}
    return HandleParams(**kwargs, validate=not args.no_validate)


def _atlas(args):
    if args.atlas:
        return load_atlas(_read_json(args.atlas, "atlas"))
    if args.synth:
        if args.seed is None:
            raise ConfigError("--seed is required with --synth")
        return synth_atlas(args.seed, args.components, args.chords, args.dimension, args.lambda0)
    raise ConfigError("an atlas is required: pass --atlas <path> or --synth --seed <n>")


def _operator(args) -> asymptotics.AsymptoticOperatorSpec:
    if args.loop:
        doc = _read_json(args.loop, "loop")
        samples = np.asarray(doc["samples"] if isinstance(doc, dict) else doc, dtype=float)
        return asymptotics.AsymptoticOperatorSpec(samples)
    m = args.dim
    return asymptotics.AsymptoticOperatorSpec.constant(args.shift * np.eye(2 * m), args.grid)


# ----------------------------------------------------------------------------
# Subcommands: each returns (document, text, exit code)
# ----------------------------------------------------------------------------

def cmd_enumerate(args):
    atlas = _atlas(args)
    ws = words.all_words(atlas)
    cyc = words.enumerate_cyclic(atlas)
    gap = words.min_action_gap(atlas)
    doc = {"words": words.words_document(ws), "cyclic_words": words.words_document(cyc),
           "action_gap": gap.gap}
    text = (f"{len(ws)} words\n{words.format_table(ws)}\n\n{len(cyc)} cyclic words\n"
            f"{words.format_table(cyc)}\n\nminimal action gap: {gap.gap:.12g}")
    return doc, text, EXIT_OK


def cmd_find_chords(args):
    params, atlas = _params(args), _atlas(args)
    system = surgery.SurgerySystem(params, atlas)
    records, lines = [], []
    for a, b, w in surgery.surgery_words(atlas):
        found = surgery.find_chord_for_word(params, atlas, w, args.multistart, args.seed or 0, system)
        records.append({"from": a, "to": b, "word": list(w.ids), "word_action": w.action,
                        "action": found.action, "action_deviation": found.action_correction,
                        "residual": found.landing_residual, "spread": found.spread,
                        "launch": found.launch})
        lines.append(f"{w.label:<16} {a}->{b:<6} residual {found.landing_residual:.2e}  "
                     f"action deviation {found.action_correction:.3e}")
    return {"epsilon": params.epsilon, "chords": records}, "\n".join(lines), EXIT_OK


def cmd_find_orbits(args):
    params, atlas = _params(args), _atlas(args)
    system = surgery.SurgerySystem(params, atlas)
    records, lines = [], []
    for w in surgery.surgery_cyclic_words(atlas):
        found = surgery.find_orbit_for_cyclic_word(params, atlas, w, system)
        records.append({"word": list(w.ids), "word_action": w.action, "action": found.action,
                        "action_deviation": found.action_correction,
                        "forward_residual": found.forward_residual,
                        "backward_residual": found.backward_residual,
                        "contraction": found.contraction, "fixed_point": found.fixed_point})
        lines.append(f"{w.label:<16} residual {found.forward_residual:.2e}  "
                     f"contraction {found.contraction:.2e}")
    return {"epsilon": params.epsilon, "orbits": records}, "\n".join(lines), EXIT_OK


def cmd_verify(args):
    params, atlas = _params(args), _atlas(args)
    report = surgery.verify_bijection(params, atlas, jobs=args.jobs, multistart=args.multistart,
                                      seed=args.seed or 0)
    doc = report.to_document()
    doc["pass"] = doc.pop("passed")
    counts = "\n".join(f"  {k:<12} words {v['words']:>3}  found {v['found']:>3}"
                       for k, v in sorted(report.counts.items()))
    text = (f"epsilon {params.epsilon}: {'PASS' if report.passed else 'FAIL'}\n{counts}\n"
            f"misses {report.misses}, multiplicities {report.multiplicities}, "
            f"max action deviation {report.max_action_deviation:.3e}")
    return doc, text, EXIT_OK if report.passed else EXIT_FAIL


def cmd_threshold(args):
    params, atlas = _params(args), _atlas(args)
    rep = surgery.epsilon_threshold(params, atlas, multistart=args.multistart)
    doc = {"epsilon0": rep.epsilon0, "bracket": list(rep.bracket),
           "scan": [{"epsilon": e, "pass": ok} for e, ok in rep.scan], "monotone": rep.monotone}
    text = f"epsilon0 ~ {rep.epsilon0:.4f} (bracket {rep.bracket[0]:.4f}..{rep.bracket[1]:.4f})"
    return doc, text, EXIT_OK


def cmd_spectrum(args):
    res = asymptotics.spectrum(_operator(args), args.count)
    doc = {"eigenvalues": res.eigenvalues, "multiplicities": res.multiplicities,
           "grid_size": res.grid_size, "error_estimate": res.error_estimate}
    text = "\n".join(f"lambda_{i + 1} = {v:.12g}  (multiplicity {m})"
                     for i, (v, m) in enumerate(zip(res.eigenvalues, res.multiplicities)))
    return doc, text + f"\nerror estimate {res.error_estimate:.2e}", EXIT_OK


def cmd_fit_tail(args):
    if not args.tail:
        raise ConfigError("--tail <path> is required")
    tail = asymptotics.TailSample.from_document(_read_json(args.tail, "tail"))
    res = asymptotics.spectrum(_operator(args), args.count)
    fit = asymptotics.fit_tail(tail, res)
    doc = {"leading_index": fit.leading_index, "coefficients": fit.coefficients,
           "decay_gap": fit.decay_gap, "residual": fit.residual}
    text = (f"leading index {fit.leading_index}, |c| = {fit.leading_coefficient:.6g}, "
            f"decay gap {fit.decay_gap:.4g}, residual {fit.residual:.2e}")
    return doc, text, EXIT_OK


def cmd_strip(args):
    params = _params(args)
    strip = strips.build_strip(params, args.variant)
    resid = strips.holomorphicity_residual(params, strip)
    energy = strips.strip_energy(params, strip)
    doc = {"variant": strip.variant, "corners": strip.corners, "holomorphicity_residual": resid,
           "energy": energy.to_document()}
    if args.grid_out:
        doc["grid"] = strip.to_document()
    text = (f"{strip.variant} strip: {strip.corners} corners, holomorphicity residual {resid:.2e}\n"
            f"area {energy.area:.12g} (unscaled {energy.area_unscaled:.6e}), action gap {energy.action_gap:.12g}, "
            f"cap {energy.cap_term:.12g}, Stokes defect {energy.stokes_defect:.2e}")
    return doc, text, EXIT_OK


def cmd_probe(args):
    params = _params(args)
    mono = strips.monotonicity_probe(params)
    kernel = strips.linearized_kernel_dim(params, t0=args.t0, delta=args.delta, boundary=args.boundary)
    passed = bool(mono.passed and kernel.dimension == 0 and not kernel.unstable)
    doc = {"monotonicity": mono.to_document(), "kernel": kernel.to_document(), "pass": passed}
    text = (f"monotonicity ratio {mono.ratio:.4g} ({'PASS' if mono.passed else 'FAIL'}), "
            f"kernel dimension {kernel.dimension}{' (unstable)' if kernel.unstable else ''}")
    return doc, text, EXIT_OK if passed else EXIT_FAIL


COMMANDS = {
    "enumerate": cmd_enumerate, "find-chords": cmd_find_chords, "find-orbits": cmd_find_orbits,
    "verify": cmd_verify, "threshold": cmd_threshold, "spectrum": cmd_spectrum,
    "fit-tail": cmd_fit_tail, "strip": cmd_strip, "probe": cmd_probe,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option values; flags take precedence")
    common.add_argument("--out", help="write the JSON document to this path")
    common.add_argument("--no-meta", action="store_true", help="omit the timestamp block")
    common.add_argument("--seed", type=int, help="random seed (required for synthetic atlases)")
    common.add_argument("--jobs", type=int, default=1)
    for name in PARAM_FIELDS:
        common.add_argument(f"--{name}", type=int if name == "n" else float)
    common.add_argument("--no-validate", action="store_true", help="skip the exponent inequalities")

    atlas = argparse.ArgumentParser(add_help=False)
    atlas.add_argument("--atlas", help="atlas JSON document")
    atlas.add_argument("--synth", action="store_true", help="use a synthetic atlas")
    atlas.add_argument("--components", type=int, default=1)
    atlas.add_argument("--chords", type=int, default=2)
    atlas.add_argument("--dimension", type=int, default=3)
    atlas.add_argument("--lambda0", action="store_true", help="include the unattached component")
    atlas.add_argument("--multistart", type=int, default=10)

    operator = argparse.ArgumentParser(add_help=False)
    operator.add_argument("--loop", help="JSON file with a 'samples' array of shape (M+1, 2m, 2m)")
    operator.add_argument("--shift", type=float, default=0.0, help="constant loop shift * identity")
    operator.add_argument("--dim", type=int, default=1)
    operator.add_argument("--grid", type=int, default=64)
    operator.add_argument("--count", type=int, default=4)

    parser = _Parser(prog="handlesurgery", description="Handle attachment model laboratory")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("enumerate", "find-chords", "find-orbits", "verify", "threshold"):
        sub.add_parser(name, parents=[common, atlas])
    for name in ("spectrum",):
        sub.add_parser(name, parents=[common, operator])
    fit = sub.add_parser("fit-tail", parents=[common, operator])
    fit.add_argument("--tail", help="TailSample JSON document")
    strip = sub.add_parser("strip", parents=[common])
    strip.add_argument("--variant", choices=strips.VARIANTS, default="two-corner")
    strip.add_argument("--grid-out", action="store_true", help="include the sample grid in the JSON")
    probe = sub.add_parser("probe", parents=[common])
    probe.add_argument("--t0", type=float, default=3.0)
    probe.add_argument("--delta", type=float, default=0.5)
    probe.add_argument("--boundary", choices=("mixed", "matching"), default="mixed")
    return parser


def _apply_config(parser, argv):
    """Parse, then re-parse with config values as defaults so explicit flags win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    config = _read_json(args.config, "config")
    if not isinstance(config, dict):
        raise ConfigError("config document must be a JSON object")
    known = vars(args)
    cleaned = {}
    for key, value in config.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise ConfigError(f"unknown config key {key!r} for {args.command}")
        cleaned[dest] = value
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    subparser.set_defaults(**cleaned)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        doc, text, code = COMMANDS[args.command](args)
    except HandleSurgeryError as exc:
        sys.stderr.write(f"error[{exc.code}]: {' '.join(str(exc).split())}\n")
        return EXIT_ERROR
    if not args.no_meta:
        from importlib.metadata import PackageNotFoundError, version
        try:
            ver = version("artifact")
        except PackageNotFoundError:
            ver = "unknown"
        doc["meta"] = {"timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
                       "argv": argv, "version": ver}
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(dump_document(doc))
    return code


if __name__ == "__main__":
    sys.exit(main())
