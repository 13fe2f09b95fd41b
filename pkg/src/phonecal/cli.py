"""Command-line entry point: ``phonecal <command> ...``.

Machine-readable output goes to stdout or the named output files; logging
and errors go to stderr.  Exit status is 0 on success and 1 on any error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .calib import CalibrationTransform, fit
from .core import (DEFAULT_FLOOR, FormatError, FramePosteriorMatrix, PdfMap, PhoneSet,
                   check_prior, frame_log_likelihoods, reduce_pdf_posteriors, reduce_pdf_priors)
from .formats import (MAGIC_LOGLIK, MAGIC_POSTERIOR, confusion_csv, matrix_files, read_alignment,
                      read_matrix, read_pdf_map, read_phones, read_priors, read_trials,
                      write_alignment, write_matrix, write_pdf_map, write_phones, write_pgm,
                      write_priors, write_trials)
from .metrics import confusion_matrix, h_mc
from .pooling import PhoneSegment, pool
from .synth import SynthConfig, generate, shuffle_labels

log = logging.getLogger("phonecal")

# CMU dictionary (ARPAbet) inventory, stress digits stripped
VOWELS = {"AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW"}
CONSONANTS = {"B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N", "NG", "P", "R",
              "S", "SH", "T", "TH", "V", "W", "Y", "Z", "ZH"}

SYNTH_PHONES_PER_UTT = 20
SYNTH_PDF_SPLIT = (0.4, 0.6)


def file_digest(path) -> str:
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        for p in sorted(path.rglob("*")):
            if p.is_file():
                h.update(str(p.relative_to(path)).encode())
                h.update(hashlib.sha256(p.read_bytes()).digest())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


class Run:
    """Collects the manifest that every report carries."""

    def __init__(self, args, inputs):
        self.t0 = time.perf_counter()
        self.command = args.command
        self.config = {k: (str(v) if isinstance(v, Path) else v)
                       for k, v in vars(args).items() if k not in ("func", "command")}
        self.inputs = {str(p): file_digest(p) for p in inputs if p is not None}
        self.seed = getattr(args, "seed", None)

    def manifest(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "seed": self.seed,
            "version": __version__,
            "wall_time": time.perf_counter() - self.t0,
        }


def emit(doc: dict, out: Path | None) -> None:
    text = json.dumps(doc, indent=1) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def trials_phones(trials_path: Path, phones_path: Path | None) -> PhoneSet:
    path = phones_path or trials_path.parent / "phones.txt"
    if not path.exists():
        raise FormatError(f"no phone set given and {path} does not exist")
    return read_phones(path)


def eval_prior_arg(args, phones: PhoneSet):
    if args.prior is None:
        return None
    try:
        return check_prior(read_priors(args.prior), phones.N)
    except ValueError as e:
        raise FormatError(f"{args.prior}: {e}") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_reduce(args) -> None:
    run = Run(args, [args.posterior_dir, args.pdf_map, args.pdf_priors, args.phones])
    phones = read_phones(args.phones)
    pdf_map = read_pdf_map(args.pdf_map, phones)
    try:
        priors = reduce_pdf_priors(read_priors(args.pdf_priors), pdf_map, phones)
    except ValueError as e:
        raise FormatError(f"{args.pdf_priors}: {e}") from None
    args.out_dir.mkdir(parents=True, exist_ok=True)
    files = matrix_files(args.posterior_dir)
    if not files:
        raise FormatError(f"{args.posterior_dir}: no posterior matrices found")
    for utt, path in files.items():
        try:
            fpm = FramePosteriorMatrix(utt, read_matrix(path, MAGIC_POSTERIOR))
            llk = frame_log_likelihoods(reduce_pdf_posteriors(fpm, pdf_map, phones), priors, args.floor)
        except FormatError as e:
            raise FormatError(f"{path}: {e}") from None
        suffix = ".csv" if path.suffix == ".csv" else ".fll"
        write_matrix(args.out_dir / f"{utt}{suffix}", llk, MAGIC_LOGLIK)
    log.info("reduced %d utterances", len(files))
    emit({"utterances": len(files), "phones": list(phones.labels), "manifest": run.manifest()},
         args.out_dir / "manifest.json")


def cmd_pool(args) -> None:
    run = Run(args, [args.llk_dir, args.alignment, args.phones])
    phones = read_phones(args.phones)
    segments = read_alignment(args.alignment, phones)
    files = matrix_files(args.llk_dir)
    needed = {s.utterance_id for s in segments}
    missing = sorted(needed - set(files))
    if missing:
        raise FormatError(f"{args.llk_dir}: no log-likelihood file for utterance {missing[0]!r}")
    mats = {}
    for utt in needed:
        m = read_matrix(files[utt], MAGIC_LOGLIK).astype(np.float64)
        if m.shape[1] != phones.N:
            raise FormatError(f"{files[utt]}: {m.shape[1]} columns, phone set has {phones.N}")
        mats[utt] = m
    trials = pool(segments, mats, args.method)
    write_trials(args.out, trials, phones)
    emit({"trials": len(trials), "method": args.method, "manifest": run.manifest()},
         Path(str(args.out) + ".manifest.json"))


def cmd_eval(args) -> None:
    phones = trials_phones(args.trials, args.phones)
    run = Run(args, [args.trials, args.transform, args.prior])
    trials = read_trials(args.trials, phones)
    transform = None if args.transform is None else CalibrationTransform.load(args.transform, phones.labels)
    report = h_mc(trials, eval_prior_arg(args, phones), transform)
    doc = report.to_dict(phones.labels)
    doc["ln_N"] = math.log(phones.N)
    doc["manifest"] = run.manifest()
    emit(doc, args.out)


def cmd_calibrate(args) -> None:
    phones = trials_phones(args.trials, args.phones)
    run = Run(args, [args.trials, args.prior])
    trials = read_trials(args.trials, phones)
    res = fit(trials, eval_prior_arg(args, phones), max_iter=args.max_iter, tol=args.tol, ridge=args.ridge)
    res.transform.save(args.out_transform, phones.labels)
    doc = res.to_dict(phones.labels)
    doc["manifest"] = run.manifest()
    emit(doc, args.out)


def cmd_crosscal(args) -> None:
    phones = trials_phones(args.trials_a, args.phones)
    run = Run(args, [args.trials_a, args.trials_b, args.prior])
    prior = eval_prior_arg(args, phones)
    sets = {"A": read_trials(args.trials_a, phones), "B": read_trials(args.trials_b, phones)}
    fits = {k: fit(v, prior, max_iter=args.max_iter, tol=args.tol) for k, v in sets.items()}
    doc = {}
    for own, other in (("A", "B"), ("B", "A")):
        doc[own] = {
            "h_mc": fits[own].h_mc_before,
            "h_mc_min": fits[own].h_mc_after,
            "alpha_self": fits[own].transform.alpha,
            "h_mc_cal": h_mc(sets[own], prior, fits[other].transform).h_mc,
            "alpha_from_other": fits[other].transform.alpha,
        }
    doc["manifest"] = run.manifest()
    emit(doc, args.out)


def subset_indices(spec: str, phones: PhoneSet) -> list[int] | None:
    if spec == "all":
        return None
    if spec in ("vowels", "consonants"):
        inventory = VOWELS if spec == "vowels" else CONSONANTS
        picked = [i for i, lab in enumerate(phones.labels) if lab.upper().rstrip("012") in inventory]
    else:
        wanted = [ln.strip() for ln in Path(spec).read_text().splitlines() if ln.strip()]
        picked = [phones.index(lab) for lab in wanted]
    if len(picked) < 2:
        raise ValueError(f"subset {spec!r} selects fewer than 2 phones")
    return picked


def cmd_confusion(args) -> None:
    phones = trials_phones(args.trials, args.phones)
    run = Run(args, [args.trials])
    trials = read_trials(args.trials, phones)
    cm = confusion_matrix(trials, phones, subset_indices(args.subset, phones), args.stress_split)
    args.out_csv.write_text(confusion_csv(cm, phones.labels))
    if args.out_pgm is not None:
        write_pgm(args.out_pgm, cm.eer)
    off = cm.eer[~np.isnan(cm.eer)]
    emit({
        "rows": cm.row_labels(phones.labels),
        "columns": [phones.labels[g] for g in cm.hypotheses],
        "mean_eer": float(off.mean()) if off.size else None,
        "manifest": run.manifest(),
    }, args.out)


def write_synth_corpus(corpus, out_dir: Path, seed: int) -> None:
    """Write a synthetic corpus as posteriors + pdf map + alignment.

    Each phone is split into two pdf-ids that share its posterior mass and
    prior in fixed proportions; phone priors are flat.
    """
    n = corpus.config.n_phones
    phones = PhoneSet([f"p{f:02d}" for f in range(n)])
    split = np.asarray(SYNTH_PDF_SPLIT)
    pdf_map = PdfMap(np.repeat(np.arange(n), split.size))
    pdf_priors = np.tile(split, n) / n
    post_dir = out_dir / "posteriors"
    post_dir.mkdir(parents=True, exist_ok=True)
    write_phones(out_dir / "phones.txt", phones)
    write_pdf_map(out_dir / "pdf_map.txt", pdf_map, phones)
    write_priors(out_dir / "pdf_priors.txt", pdf_priors)
    order = np.random.default_rng(seed).permutation(len(corpus))
    segments = []
    for u, start in enumerate(range(0, len(order), SYNTH_PHONES_PER_UTT)):
        utt = f"utt{u:05d}"
        rows, t = [], 0
        for k in order[start:start + SYNTH_PHONES_PER_UTT]:
            block = corpus.frames[k]
            segments.append(PhoneSegment(utt, int(corpus.labels[k]), t, t + len(block)))
            rows.append(block)
            t += len(block)
        llk = np.concatenate(rows)
        z = llk - llk.max(axis=1, keepdims=True)
        post = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        pdf_post = (post[:, :, None] * split).reshape(len(llk), -1)
        write_matrix(post_dir / f"{utt}.fpm", pdf_post, MAGIC_POSTERIOR)
    write_alignment(out_dir / "alignment.csv", segments, phones)


def cmd_synth(args) -> None:
    run = Run(args, [args.config])
    cfg = SynthConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    run.seed = cfg.seed
    corpus = generate(cfg)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_synth_corpus(corpus, args.out_dir, cfg.seed)
    (args.out_dir / "config.json").write_text(json.dumps(cfg.to_json(), indent=1) + "\n")
    emit({"trials": len(corpus), "manifest": run.manifest()}, args.out_dir / "manifest.json")


def cmd_caveat(args) -> None:
    phones = trials_phones(args.trials, args.phones)
    run = Run(args, [args.trials, args.prior])
    prior = eval_prior_arg(args, phones)
    shuffled = shuffle_labels(read_trials(args.trials, phones), args.seed)
    res = fit(shuffled, prior, max_iter=args.max_iter, tol=args.tol)
    emit({
        "h_mc_shuffled": res.h_mc_before,
        "h_mc_shuffled_selfcal": res.h_mc_after,
        "ln_N": math.log(phones.N),
        "alpha": res.transform.alpha,
        "manifest": run.manifest(),
    }, args.out)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phonecal", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def fit_opts(sp):
        sp.add_argument("--max-iter", type=int, default=500)
        sp.add_argument("--tol", type=float, default=1e-7)

    def common(sp, trials_arg=True):
        if trials_arg:
            sp.add_argument("trials", type=Path, help="trials file (JSON lines)")
        sp.add_argument("--phones", type=Path, help="phone set (default: phones.txt next to the trials)")
        sp.add_argument("--prior", type=Path, help="evaluation prior, one value per phone (default flat)")
        sp.add_argument("--out", type=Path, help="write the JSON report here instead of stdout")

    sp = sub.add_parser("reduce", help="pdf-id posteriors -> frame phone log-likelihoods")
    sp.add_argument("posterior_dir", type=Path)
    sp.add_argument("--pdf-map", type=Path, required=True)
    sp.add_argument("--pdf-priors", type=Path, required=True)
    sp.add_argument("--phones", type=Path, required=True)
    sp.add_argument("--out-dir", type=Path, required=True)
    sp.add_argument("--floor", type=float, default=DEFAULT_FLOOR)
    sp.set_defaults(func=cmd_reduce)

    sp = sub.add_parser("pool", help="frame log-likelihoods + alignment -> phone trials")
    sp.add_argument("llk_dir", type=Path)
    sp.add_argument("--alignment", type=Path, required=True)
    sp.add_argument("--phones", type=Path, required=True)
    sp.add_argument("--method", choices=["sum", "mean", "logdur"], default="mean")
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_pool)

    sp = sub.add_parser("eval", help="class-balanced cross entropy of a trials file")
    common(sp)
    sp.add_argument("--transform", type=Path)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("calibrate", help="fit the affine calibration transform")
    common(sp)
    fit_opts(sp)
    sp.add_argument("--ridge", type=float, default=0.0)
    sp.add_argument("--out-transform", type=Path, required=True)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("crosscal", help="calibrate each set with the other set's transform")
    sp.add_argument("trials_a", type=Path)
    sp.add_argument("trials_b", type=Path)
    common(sp, trials_arg=False)
    fit_opts(sp)
    sp.set_defaults(func=cmd_crosscal)

    sp = sub.add_parser("confusion", help="pairwise EER confusion matrix")
    common(sp)
    sp.add_argument("--subset", default="all", help="all | vowels | consonants | label-list file")
    sp.add_argument("--stress-split", action="store_true")
    sp.add_argument("--out-csv", type=Path, required=True)
    sp.add_argument("--out-pgm", type=Path)
    sp.set_defaults(func=cmd_confusion)

    sp = sub.add_parser("synth", help="write a synthetic corpus")
    sp.add_argument("config", type=Path, help="JSON synthesis config")
    sp.add_argument("--out-dir", type=Path, required=True)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("caveat", help="evaluate with deliberately wrong labels")
    common(sp)
    fit_opts(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_caveat)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (FormatError, ValueError, KeyError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"phonecal {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
