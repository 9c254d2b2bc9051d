"""Command-line entry point wiring corpus, scoring, distillation, and evaluation.

Commands: score, distill, eval-identification, eval-generation, kto-check,
stats. Every run writes its primary artifact plus a manifest with digests of
the raw input bytes; given identical inputs and a reference backend, artifact
bytes are identical run to run.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import Future, ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence

from . import __version__, backends, corpus, distill, evalmetrics, kto, scoring
from .config import AppConfig, load_config
from .errors import (
    ConfigError,
    CorpusFormatError,
    ToolkitError,
    TransportError,
)
from .manifest import RunManifest
from .tokenization import get_counter
from .util import iter_jsonl, round_half_up

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_TRANSPORT = 4
EXIT_PARTIAL = 5


def _eprint(message: str) -> None:
    print(message, file=sys.stderr)


def _announce_config(app: AppConfig) -> None:
    _eprint(f"effective-config: {app.dump()}")


def _write_json(path: str | Path, payload: dict[str, Any]) -> None:
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------


def _existing_score_keys(out: Path) -> set[tuple[str, str]]:
    """Keys already scored; an interrupted run's partial trailing line is dropped."""
    if not out.exists():
        return set()
    data = out.read_bytes()
    if data and not data.endswith(b"\n"):
        cut = data.rfind(b"\n") + 1
        out.write_bytes(data[:cut])
        _eprint(f"score: dropped a partial trailing line from {out} (interrupted run)")
    return {(s.entry_id, s.backend_id) for s in scoring.read_scores(out)}


def cmd_score(args: argparse.Namespace, manifest: RunManifest) -> int:
    app = load_config(args.config)
    if not app.backends:
        raise ConfigError("score requires at least one configured backend")
    _announce_config(app)
    manifest.set_config(args.config)
    manifest.add_input(args.corpus)
    corpus_obj = corpus.load_corpus(args.corpus, args.split)

    out = Path(args.out)
    done = _existing_score_keys(out)

    unscorable = [entry.entry_id for entry in corpus_obj if not entry.scorable]
    tasks = [
        (entry, backend)
        for entry in corpus_obj
        if entry.scorable
        for backend in app.backends
        if (entry.entry_id, backend.backend_id) not in done
    ]

    pools = {b.backend_id: ThreadPoolExecutor(max_workers=b.max_parallel) for b in app.backends}
    futures: list[tuple[str, str, Future]] = []
    try:
        for entry, backend in tasks:
            futures.append(
                (
                    entry.entry_id,
                    backend.backend_id,
                    pools[backend.backend_id].submit(
                        scoring.desiredness, entry, backend, truncation_limit=app.truncation_limit
                    ),
                )
            )
        failures: list[dict[str, str]] = []
        truncated = 0
        written = 0
        # results are written in task order, never arrival order, so output
        # bytes are deterministic and an interrupted run resumes cleanly
        with out.open("a", encoding="utf-8", newline="\n") as stream:
            for entry_id, backend_id, future in futures:
                try:
                    score = future.result()
                except ToolkitError as exc:
                    failures.append(
                        {
                            "entry_id": entry_id,
                            "backend_id": backend_id,
                            "error": type(exc).__name__,
                            "message": str(exc),
                        }
                    )
                    continue
                if score.prompt_truncated:
                    truncated += 1
                stream.write(scoring.score_line(score) + "\n")
                stream.flush()
                written += 1
    finally:
        for pool in pools.values():
            pool.shutdown(wait=False, cancel_futures=True)

    manifest.extra = {
        "entries": len(corpus_obj),
        "unscorable": len(unscorable),
        "skipped_existing": len(done),
        "scored": written,
        "truncated_prompts": truncated,
        "failures": failures,
        "effective_config": json.loads(app.dump()),
    }
    manifest.write(str(out) + ".manifest.json")
    _eprint(
        f"score: {written} new line(s), {len(done)} already present, "
        f"{len(unscorable)} unscorable entr(ies), {len(failures)} failure(s)"
    )
    if failures:
        for failure in failures[:10]:
            _eprint(f"  {failure['entry_id']}/{failure['backend_id']}: {failure['message']}")
        if all(f["error"] == "TransportError" for f in failures):
            return EXIT_TRANSPORT
        return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# distill
# ---------------------------------------------------------------------------


def cmd_distill(args: argparse.Namespace, manifest: RunManifest) -> int:
    expected_backends = None
    truncation_limit = scoring.DEFAULT_TRUNCATION_LIMIT
    counter = get_counter("byte")
    if args.config:
        app = load_config(args.config)
        _announce_config(app)
        manifest.set_config(args.config)
        truncation_limit = app.truncation_limit
        if app.backends:
            expected_backends = [b.backend_id for b in app.backends]
    manifest.add_input(args.corpus)
    manifest.add_input(args.scores)

    corpus_obj = corpus.load_corpus(args.corpus, args.split)
    scores = scoring.read_scores(args.scores)
    verdicts, incomplete = distill.build_verdicts(scores, expected_backends)
    desired, undesired, unscorable = distill.partition(corpus_obj, verdicts)

    scored_entries = [e for e in corpus_obj if e.entry_id in verdicts]
    sft_records = distill.emit_sft(desired, truncation_limit=truncation_limit, counter=counter)
    kto_records = distill.emit_kto(
        scored_entries, verdicts, truncation_limit=truncation_limit, counter=counter
    )
    corpus_stats = distill.stats(verdicts, unscorable=len(unscorable))

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    distill.write_verdicts(out_dir / "verdicts.jsonl", verdicts.values())
    distill.write_sft(out_dir / "sft.jsonl", sft_records)
    distill.write_kto(out_dir / "kto.jsonl", kto_records)
    distill.write_stats(out_dir / "stats.json", corpus_stats)

    print(corpus_stats.table())
    if not sft_records:
        _eprint("warning: no desired entries; SFT file is empty")
    if incomplete:
        _eprint(f"warning: {len(incomplete)} entr(ies) had incomplete backend coverage")

    manifest.extra = {
        "entries": len(corpus_obj),
        "scored": len(scored_entries),
        "desired": len(desired),
        "undesired": len(undesired),
        "unscorable": len(unscorable),
        "incomplete_coverage": incomplete,
        "sft_records": len(sft_records),
        "kto_records": len(kto_records),
        "truncated_sft_prompts": sum(1 for r in sft_records if r.truncated),
        "truncated_kto_prompts": sum(1 for r in kto_records if r.truncated),
        "sft_instruction_frame": distill.REVIEW_PROMPT,
    }
    manifest.write(out_dir / "manifest.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval-identification
# ---------------------------------------------------------------------------


def _baseline_verdicts(
    args: argparse.Namespace, labels: dict[str, corpus.Label]
) -> tuple[dict[str, corpus.Label], list[dict[str, str]]]:
    if not args.corpus:
        raise ConfigError(f"--baseline {args.baseline} requires --corpus")
    corpus_obj = corpus.load_corpus(args.corpus, args.split)
    by_id = {entry.entry_id: entry for entry in corpus_obj}
    missing = sorted(set(labels) - set(by_id))
    if missing:
        raise CorpusFormatError(f"annotated ids missing from corpus: {missing[:5]}")
    verdicts: dict[str, corpus.Label] = {}
    failures: list[dict[str, str]] = []
    if args.baseline == "ten-line":
        for entry_id in sorted(labels):
            verdicts[entry_id] = evalmetrics.ten_line_rule(by_id[entry_id])
        return verdicts, failures
    # llm-judge
    if not args.config or not args.backend:
        raise ConfigError("--baseline llm-judge requires --config and --backend")
    app = load_config(args.config)
    _announce_config(app)
    backend = app.backend(args.backend)
    for entry_id in sorted(labels):
        try:
            verdicts[entry_id] = evalmetrics.llm_judge(by_id[entry_id], backend)
        except ToolkitError as exc:
            failures.append(
                {"entry_id": entry_id, "error": type(exc).__name__, "message": str(exc)}
            )
    return verdicts, failures


def cmd_eval_identification(args: argparse.Namespace, manifest: RunManifest) -> int:
    if bool(args.verdicts) == bool(args.baseline):
        raise ConfigError("provide exactly one of --verdicts or --baseline")
    manifest.add_input(args.annotations)
    labels = corpus.load_annotations(args.annotations)

    failures: list[dict[str, str]] = []
    if args.verdicts:
        manifest.add_input(args.verdicts)
        verdict_objects = distill.read_verdicts(args.verdicts)
        verdicts = {entry_id: v.verdict for entry_id, v in verdict_objects.items()}
        method = "consensus"
    else:
        if args.corpus:
            manifest.add_input(args.corpus)
        if args.config:
            manifest.set_config(args.config)
        verdicts, failures = _baseline_verdicts(args, labels)
        method = args.baseline

    if failures:
        _eprint(f"eval-identification: {len(failures)} entr(ies) could not be judged")
        for failure in failures[:10]:
            _eprint(f"  {failure['entry_id']}: {failure['message']}")
        manifest.extra = {"method": method, "failures": failures}
        manifest.write(str(args.out) + ".manifest.json")
        return EXIT_PARTIAL

    counts = evalmetrics.confusion(verdicts, labels)
    report = evalmetrics.metrics(counts)
    payload = {
        "method": method,
        "labeled": counts.total,
        "confusion": {"tp": counts.tp, "fp": counts.fp, "fn": counts.fn, "tn": counts.tn},
        "percentages": report.percentages(),
    }
    _write_json(args.out, payload)
    print(report.table())

    manifest.extra = payload
    manifest.write(str(args.out) + ".manifest.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval-generation
# ---------------------------------------------------------------------------


def _read_text_records(path: str | Path) -> dict[str, str]:
    records: dict[str, str] = {}
    for lineno, record in iter_jsonl(path):
        if set(record) != {"entry_id", "text"}:
            raise CorpusFormatError(
                "expected fields ['entry_id', 'text']", line=lineno, path=str(path)
            )
        entry_id = record["entry_id"]
        text = record["text"]
        if not isinstance(entry_id, str) or not isinstance(text, str):
            raise CorpusFormatError("entry_id and text must be strings", line=lineno, path=str(path))
        if entry_id in records:
            raise CorpusFormatError(f"duplicate entry_id {entry_id!r}", line=lineno, path=str(path))
        records[entry_id] = text
    if not records:
        raise CorpusFormatError("file contains no records", path=str(path))
    return records


def cmd_eval_generation(args: argparse.Namespace, manifest: RunManifest) -> int:
    manifest.add_input(args.candidates)
    manifest.add_input(args.references)
    candidates = _read_text_records(args.candidates)
    references = _read_text_records(args.references)
    if set(candidates) != set(references):
        only_c = sorted(set(candidates) - set(references))[:5]
        only_r = sorted(set(references) - set(candidates))[:5]
        raise CorpusFormatError(
            f"candidate/reference ids differ (candidates-only {only_c}, references-only {only_r})"
        )
    ids = sorted(candidates)
    aggregate = evalmetrics.bleu4_corpus([candidates[i] for i in ids], [references[i] for i in ids])
    payload = {
        "bleu4": aggregate,
        "bleu4_pct": round_half_up(aggregate * 100),
        "count": len(ids),
    }
    _write_json(args.out, payload)
    print(f"BLEU-4: {payload['bleu4_pct']:.2f} over {len(ids)} pair(s)")
    manifest.extra = payload
    manifest.write(str(args.out) + ".manifest.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# kto-check
# ---------------------------------------------------------------------------


def cmd_kto_check(args: argparse.Namespace, manifest: RunManifest) -> int:
    app = load_config(args.config)
    _announce_config(app)
    manifest.set_config(args.config)
    cfg = app.kto

    if bool(args.kto_file) == bool(args.counts):
        raise ConfigError("provide exactly one of --kto-file or --counts")
    if args.kto_file:
        manifest.add_input(args.kto_file)
        n_desired, n_undesired = _count_kto_labels(args.kto_file)
    else:
        n_desired, n_undesired = args.counts

    check = kto.check_lambda_constraint(cfg, n_desired, n_undesired)
    payload: dict[str, Any] = {
        "n_desired": n_desired,
        "n_undesired": n_undesired,
        "lambda_desired": cfg.lambda_desired,
        "lambda_undesired": cfg.lambda_undesired,
        "ratio": check.ratio,
        "ok": check.ok,
    }
    print(f"weighted class ratio: {check.ratio:.4f} ({'ok' if check.ok else 'OUT OF RANGE [1, 4/3]'})")
    if not check.ok:
        low, high = kto.suggested_lambda_desired(cfg, n_desired, n_undesired)
        payload["suggested_lambda_desired"] = [low, high]
        print(f"suggested lambda_desired range: [{low:.4f}, {high:.4f}]")

    if args.audit:
        manifest.add_input(args.audit)
        examples = kto.load_audit_examples(args.audit)
        if args.kl_file:
            manifest.add_input(args.kl_file)
            z0 = kto.kl_reference_point(_read_mismatched_rewards(args.kl_file))
        else:
            z0 = args.z0
        loss = kto.kto_loss(examples, z0, cfg)
        payload["audit"] = {"count": len(examples), "z0": z0, "loss": loss}
        print(f"audit loss over {len(examples)} example(s) at z0={z0:.6g}: {loss:.10g}")

    _write_json(args.out, payload)
    manifest.extra = payload
    manifest.write(str(args.out) + ".manifest.json")
    return EXIT_OK


def _count_kto_labels(path: str | Path) -> tuple[int, int]:
    n_desired = n_undesired = 0
    for lineno, record in iter_jsonl(path):
        if set(record) != set(distill.KTO_FIELDS):
            raise CorpusFormatError(
                f"expected fields {list(distill.KTO_FIELDS)}, got {sorted(record)}",
                line=lineno,
                path=str(path),
            )
        try:
            label = corpus.Label(record["label"])
        except ValueError:
            raise CorpusFormatError(
                f"label must be 'desired' or 'undesired', got {record['label']!r}",
                line=lineno,
                path=str(path),
            ) from None
        if label is corpus.Label.DESIRED:
            n_desired += 1
        else:
            n_undesired += 1
    return n_desired, n_undesired


def _read_mismatched_rewards(path: str | Path) -> list[float]:
    rewards: list[float] = []
    for lineno, record in iter_jsonl(path):
        if set(record) != {"policy_logprob", "ref_logprob"}:
            raise CorpusFormatError(
                "expected fields ['policy_logprob', 'ref_logprob']", line=lineno, path=str(path)
            )
        try:
            rewards.append(float(record["policy_logprob"]) - float(record["ref_logprob"]))
        except (TypeError, ValueError) as exc:
            raise CorpusFormatError(f"bad reward record: {exc}", line=lineno, path=str(path)) from exc
    return rewards


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------


def cmd_stats(args: argparse.Namespace, manifest: RunManifest) -> int:
    manifest.add_input(args.verdicts)
    verdicts = distill.read_verdicts(args.verdicts)
    corpus_stats = distill.stats(verdicts, unscorable=args.unscorable)
    _write_json(args.out, corpus_stats.to_record())
    print(corpus_stats.table())
    manifest.extra = corpus_stats.to_record()
    manifest.write(str(args.out) + ".manifest.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / main
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="revdistill",
        description="Distill code-review corpora by scoring which comments drove the fix.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    split_choices = [t.value for t in corpus.SplitTag]

    p = sub.add_parser("score", help="score every (entry, backend) pair; resumable")
    p.add_argument("--corpus", required=True, help="corpus file (line-delimited records)")
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--out", required=True, help="score file; existing pairs are skipped")
    p.add_argument("--split", default="other", choices=split_choices, help="split tag (default: other)")
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("distill", help="consensus verdicts + SFT/KTO datasets + stats")
    p.add_argument("--corpus", required=True, help="corpus file")
    p.add_argument("--scores", required=True, help="score file from the score command")
    p.add_argument("--out-dir", required=True, help="directory for verdicts/sft/kto/stats")
    p.add_argument("--config", default=None, help="TOML config; fixes the expected backend set")
    p.add_argument("--split", default="other", choices=split_choices, help="split tag (default: other)")
    p.set_defaults(handler=cmd_distill)

    p = sub.add_parser("eval-identification", help="metrics vs human labels")
    p.add_argument("--annotations", required=True, help="annotation file (entry_id/label lines)")
    p.add_argument("--out", required=True, help="metrics report JSON")
    p.add_argument("--verdicts", default=None, help="verdict file from distill")
    p.add_argument(
        "--baseline",
        default=None,
        choices=["ten-line", "llm-judge"],
        help="evaluate a baseline instead of a verdict file (needs --corpus)",
    )
    p.add_argument("--corpus", default=None, help="corpus file (baselines only)")
    p.add_argument("--config", default=None, help="TOML config (llm-judge only)")
    p.add_argument("--backend", default=None, help="backend_id of the judge (llm-judge only)")
    p.add_argument("--split", default="other", choices=split_choices, help="split tag (default: other)")
    p.set_defaults(handler=cmd_eval_identification)

    p = sub.add_parser("eval-generation", help="aggregate sentence BLEU-4")
    p.add_argument("--candidates", required=True, help="entry_id/text lines of generated comments")
    p.add_argument("--references", required=True, help="entry_id/text lines of gold comments")
    p.add_argument("--out", required=True, help="report JSON")
    p.set_defaults(handler=cmd_eval_generation)

    p = sub.add_parser("kto-check", help="lambda constraint and optional loss audit")
    p.add_argument("--config", required=True, help="TOML config carrying the [kto] section")
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--kto-file", default=None, help="count labels from a kto dataset file")
    p.add_argument(
        "--counts",
        nargs=2,
        type=int,
        metavar=("N_DESIRED", "N_UNDESIRED"),
        default=None,
        help="explicit class counts instead of --kto-file",
    )
    p.add_argument("--audit", default=None, help="logprob audit file; reports the loss over it")
    p.add_argument("--z0", type=float, default=0.0, help="KL reference point (default: 0.0)")
    p.add_argument("--kl-file", default=None, help="mismatched-pair logprobs; overrides --z0")
    p.set_defaults(handler=cmd_kto_check)

    p = sub.add_parser("stats", help="table + record from a verdict file")
    p.add_argument("--verdicts", required=True, help="verdict file from distill")
    p.add_argument("--out", required=True, help="stats record JSON")
    p.add_argument("--unscorable", type=int, default=0, help="unscorable count to include (default: 0)")
    p.set_defaults(handler=cmd_stats)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    manifest = RunManifest(command=" ".join(["revdistill", *argv]))
    try:
        return args.handler(args, manifest)
    except ConfigError as exc:
        _eprint(f"config error: {exc}")
        return EXIT_CONFIG
    except (CorpusFormatError, FileNotFoundError, ValueError) as exc:
        _eprint(f"input error: {exc}")
        return EXIT_INPUT
    except TransportError as exc:
        _eprint(f"transport error: {exc}")
        return EXIT_TRANSPORT
    except ToolkitError as exc:
        _eprint(f"error: {exc}")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    raise SystemExit(main())
