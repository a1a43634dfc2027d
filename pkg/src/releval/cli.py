"""``releval`` command line.

Every subcommand reads one JSON config (``--config``), applies flag overrides,
writes its outputs under ``paths.output_dir`` and echoes the effective config
there as ``effective_config.json``.

Exit codes: 0 ok, 1 input error, 2 remote-judge failure, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from . import __version__
from .adapter_lab import TrainConfig, featurize_all, grad_check, train
from .analysis import misprediction_join, overlap_stats, segment_breakdown, specificity_heuristic
from .config import RunConfig, load_config
from .dataset import (Qip, dataset_stats, group_rounds, ingest_annotations, ingest_qips,
                      label_distribution_from_counts, limit_queries_per_item, resolve_majority,
                      round_labels, write_qips, write_resolved)
from .errors import InputError, JudgeError, RelevalError
from .experiment import (AGREEMENT_HEADER, AgreementMatrix, agreement_rows, agreement_table,
                         combined_score, experiments_to_rows, load_experiments, reenact,
                         reversal_check, write_outcomes_csv)
from .io import dumps, format_table, read_jsonl, write_csv, write_jsonl
from .judge import (BatchProgress, CachingJudge, ChatJudge, JudgeInput, JudgeVerdict,
                    NoisyOracleJudge, OracleJudge, RemoteJudge, ReplayJudge, VerdictCache,
                    judge_batch, write_verdicts)
from .metrics import ConfusionMatrix3, f1_scores
from .rng import derive_seed
from .synth import make_annotations, make_corpus, planted_experiments
from .textgen import InputVariant, augment, render_input, render_item

log = logging.getLogger("releval")


# -- shared loading -------------------------------------------------------

def _require(value, what: str):
    if not value:
        raise InputError(f"config is missing paths.{what}")
    return value


def _load_qips(cfg: RunConfig) -> list[Qip]:
    res = ingest_qips(_require(cfg.paths.qips, "qips"))
    for err in res.errors:
        log.warning("qips line %d skipped: %s", err.line, err.message)
    return res.records


def _resolved(cfg: RunConfig):
    if cfg.paths.resolved:
        return [(r["query_id"], r["item_id"], int(r["final_label"]))
                for r in read_jsonl(cfg.paths.resolved)]
    if cfg.paths.annotations:
        anns = _load_annotations(cfg)
        return [(r.query_id, r.item_id, r.final_label)
                for r in (resolve_majority(g) for g in group_rounds(anns).values())]
    return None


def _load_annotations(cfg: RunConfig):
    res = ingest_annotations(cfg.paths.annotations)
    if res.errors:
        first = res.errors[0]
        raise InputError(f"{cfg.paths.annotations}:{first.line}: {first.message} "
                         f"({len(res.errors)} bad line(s))")
    return res.records


def gold_labels(cfg: RunConfig, qips: list[Qip] | None = None) -> dict[tuple[str, str], int]:
    """Resolved majority labels when available, else the labels carried by qips.jsonl."""
    resolved = _resolved(cfg)
    if resolved is not None:
        return {(q, i): lab for q, i, lab in resolved}
    qips = qips if qips is not None else _load_qips(cfg)
    return {q.key: q.label for q in qips if q.label is not None}


def _load_verdict_file(path: str) -> dict[tuple[str, str], int]:
    out = {}
    for row in read_jsonl(path):
        v = JudgeVerdict.from_json(row)
        out[(v.query_id, v.item_id)] = v.label
    return out


def _verdict_sources(cfg: RunConfig) -> dict[str, dict[tuple[str, str], int]]:
    sources = dict(cfg.paths.verdicts)
    if not sources:
        default = cfg.out / "verdicts.jsonl"
        if not default.exists():
            raise InputError("no verdict files configured (paths.verdicts) and no "
                             f"{default} from a previous judge run")
        sources = {cfg.judge.effective_id: str(default)}
    return {judge_id: _load_verdict_file(p) for judge_id, p in sources.items()}


def _num(x: float) -> str:
    return format(x, ".6f")


# -- subcommands ----------------------------------------------------------

def cmd_resolve(cfg: RunConfig, args) -> dict:
    anns = _load_annotations(cfg) if cfg.paths.annotations else []
    _require(cfg.paths.annotations, "annotations")
    resolved = [resolve_majority(g) for g in group_rounds(anns).values()]
    write_resolved(cfg.out / "resolved.jsonl", resolved)
    return {"resolved": len(resolved), "adjudicated": sum(r.adjudicated for r in resolved),
            "three_round": sum(r.rounds_used == 3 for r in resolved)}


def _write_stats(cfg: RunConfig, pairs, labels: list[int] | None = None,
                 counts: dict[int, int] | None = None) -> dict:
    header = ["metric", "value"]
    rows = []
    if pairs is not None:
        st = dataset_stats(pairs)
        rows += [["unique_queries", st.n_queries], ["unique_items", st.n_items],
                 ["queries_per_item", _num(st.queries_per_item)],
                 ["items_per_query", _num(st.items_per_query)]]
    if counts is None and labels:
        counts = Counter(labels)
    dist = label_distribution_from_counts(counts) if counts else {}
    names = {2: "relevant", 1: "related", 0: "irrelevant"}
    for label, share in dist.items():
        rows.append([f"label_{label}_{names[label]}_count", share.count])
        rows.append([f"label_{label}_{names[label]}_percent", f"{share.percent:.2f}"])
    if dist:
        rows.append(["total_labelled", sum(s.count for s in dist.values())])
    write_csv(cfg.out / "stats.csv", header, rows)
    (cfg.out / "stats.txt").write_text(format_table(header, rows), encoding="utf-8")
    return {r[0]: r[1] for r in rows}


def cmd_ingest(cfg: RunConfig, args) -> dict:
    res = ingest_qips(_require(cfg.paths.qips, "qips"))
    write_jsonl(cfg.out / "ingest_errors.jsonl",
                ({"line": e.line, "error": e.message} for e in res.errors))
    summary = {"qips": len(res.records), "skipped_lines": res.skipped}
    labels = [q.label for q in res.records if q.label is not None]
    if cfg.paths.annotations:
        summary.update(cmd_resolve(cfg, args))
        resolved = read_jsonl(cfg.out / "resolved.jsonl")
        labels = [r["final_label"] for r in resolved]
    summary["stats"] = _write_stats(cfg, [q.key for q in res.records], labels)
    return summary


def cmd_stats(cfg: RunConfig, args) -> dict:
    if args.label_counts:
        raw = json.loads(Path(args.label_counts).read_text(encoding="utf-8"))
        counts = {int(k): int(v) for k, v in raw.items()}
        return _write_stats(cfg, None, counts=counts)
    qips = _load_qips(cfg)
    gold = gold_labels(cfg, qips)
    return _write_stats(cfg, [q.key for q in qips], list(gold.values()))


def _prepared_qips(cfg: RunConfig, qips: list[Qip]) -> list[Qip]:
    if cfg.variant == 3:
        qips = limit_queries_per_item(qips, cfg.max_queries_per_item,
                                      derive_seed(cfg.seed, "render", "limit_queries_per_item"))
    return qips


def cmd_render(cfg: RunConfig, args) -> dict:
    qips = _prepared_qips(cfg, _load_qips(cfg))
    aug = cfg.augmentation_config()
    if "seed" not in cfg.augmentation:
        aug = type(aug)(**{**aug.to_json(), "seed": derive_seed(cfg.seed, "render")})
    rows = augment(qips, aug)
    variant = InputVariant(cfg.variant)
    n = write_jsonl(cfg.out / "rendered.jsonl", (
        {"query_id": q.query.query_id, "item_id": q.item.item_id, "label": q.label,
         "text": render_input(q.query, q.item, variant)} for q in rows))
    return {"rendered": n, "synthetic_negatives": len(rows) - len(qips)}


def build_judge(cfg: RunConfig, gold: dict | None, cache: VerdictCache):
    jc = cfg.judge
    jid = jc.effective_id
    if jc.kind == "oracle":
        return OracleJudge(gold or {}, judge_id=jid)
    if jc.kind == "noisy_oracle":
        return NoisyOracleJudge(gold or {}, jc.noise_rate, derive_seed(cfg.seed, "judge"), judge_id=jid)
    if jc.kind == "replay":
        from .judge import PROMPT_TEMPLATE_VERSION
        return ReplayJudge(cache, jid, jc.template_version or PROMPT_TEMPLATE_VERSION)
    kwargs = {"judge_id": jid, "timeout_s": jc.timeout_s}
    if jc.kind == "remote":
        judge = RemoteJudge(jc.endpoint, **kwargs)
        if jc.template_version:
            judge.template_version = jc.template_version
        return judge
    return ChatJudge(jc.endpoint, model=jc.model, **kwargs)


def cmd_judge(cfg: RunConfig, args) -> dict:
    qips = _load_qips(cfg)
    variant = InputVariant(cfg.variant)
    inputs = [JudgeInput(q.query.query_id, q.item.item_id, q.query.text, render_item(q.item, variant))
              for q in qips]
    cache = VerdictCache(cfg.paths.cache or cfg.out / "verdict_cache.jsonl")
    gold = gold_labels(cfg, qips) if cfg.judge.kind in ("oracle", "noisy_oracle") else None
    inner = build_judge(cfg, gold, cache)
    # oracle labels are keyed by pair ids, not by content, so they skip the content-keyed cache
    local = cfg.judge.kind in ("oracle", "noisy_oracle") or isinstance(inner, ReplayJudge)
    judge = inner if local else CachingJudge(inner, cache)
    progress = BatchProgress()
    items = judge_batch(judge, inputs, cfg.concurrency_limit, cfg.judge.retry_policy(),
                        progress=progress)
    write_verdicts(cfg.out / "verdicts.jsonl", items)
    failures = [{"query_id": it.input.query_id, "item_id": it.input.item_id,
                 "error": str(it.error), "attempts": it.attempts}
                for it in items if it.error is not None]
    write_jsonl(cfg.out / "judge_failures.jsonl", failures)
    if isinstance(judge, CachingJudge):
        cached, fresh = judge.hits, judge.fresh
    elif isinstance(judge, ReplayJudge):
        cached, fresh = progress.succeeded, 0
    else:
        cached, fresh = 0, progress.succeeded
    summary = {"judge_id": inner.judge_id, "total": len(items), "cached": cached, "fresh": fresh,
               "failed": len(failures), "requests": getattr(inner, "requests", 0),
               "retried_items": sum(1 for it in items if it.attempts > 1),
               "total_attempts": sum(it.attempts for it in items)}
    for it in items:
        if it.attempts > 1:
            log.warning("(%s, %s) needed %d attempts", it.input.query_id, it.input.item_id, it.attempts)
    (cfg.out / "judge_summary.json").write_text(dumps(summary) + "\n", encoding="utf-8")
    for it in items:
        if it.error is not None and not isinstance(it.error, JudgeError):
            raise it.error
    if failures:
        raise JudgeError(f"{len(failures)} of {len(items)} judgments failed "
                         f"(first: {failures[0]['error']}); see judge_failures.jsonl")
    return summary


def cmd_evaluate(cfg: RunConfig, args) -> dict:
    gold = gold_labels(cfg)
    rows, report = [], {}
    sources = _verdict_sources(cfg)
    if cfg.paths.annotations:
        sources = {f"human_round{cfg.initial_round}":
                   round_labels(_load_annotations(cfg), cfg.initial_round), **sources}
    for judge_id, preds in sources.items():
        keys = [k for k in gold if k in preds]
        missing = len(gold) - len(keys)
        if not keys:
            raise InputError(f"judge {judge_id!r} covers none of the gold QIPs")
        cm = ConfusionMatrix3.from_labels([gold[k] for k in keys], [preds[k] for k in keys])
        f1 = f1_scores(cm)
        rows.append([judge_id, len(keys), missing, *(f"{v:.3f}" for v in f1.per_class), f"{f1.micro:.3f}"])
        report[judge_id] = {"n": len(keys), "f1": list(f1.per_class), "micro": f1.micro,
                            "confusion": cm.counts.tolist()}
    header = ["judge_id", "n", "missing", "f1_class0", "f1_class1", "f1_class2", "f1_micro"]
    write_csv(cfg.out / "f1.csv", header, rows)
    (cfg.out / "f1.txt").write_text(format_table(header, rows), encoding="utf-8")
    return report


def _matrices_from_counts(path: str) -> dict:
    """``{"rows": "human"|"model", "judges": {id: {k: 3x3}}}`` -> matrices."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    rows = raw.get("rows", "human")
    return {jid: {int(k): AgreementMatrix.from_counts(c, int(k), rows=rows) for k, c in by_k.items()}
            for jid, by_k in raw["judges"].items()}


def _write_agreement(cfg: RunConfig, matrices: dict) -> dict:
    write_csv(cfg.out / "agreement.csv", AGREEMENT_HEADER, agreement_rows(matrices))
    (cfg.out / "agreement.txt").write_text(agreement_table(matrices), encoding="utf-8")
    return {jid: {str(k): {"combined_score": f"{combined_score(m):.3f}",
                           "no_reversal": reversal_check(m)} for k, m in by_k.items()}
            for jid, by_k in matrices.items()}


def cmd_reenact(cfg: RunConfig, args) -> dict:
    if args.from_counts:
        return _write_agreement(cfg, _matrices_from_counts(args.from_counts))
    exps = load_experiments(_require(cfg.paths.experiments, "experiments"))
    human = gold_labels(cfg)
    models = _verdict_sources(cfg)
    r = reenact(exps, human, models, cfg.ks, cfg.alpha)
    write_outcomes_csv(cfg.out / "outcomes_human.csv", r.human)
    header = ["judge_id", "experiment_id", "k", "n_queries", "mean_diff", "t", "p", "verdict"]
    rows = []
    for jid, outs in [("human", r.human), *r.models.items()]:
        for o in outs:
            for k, res in o.results.items():
                rows.append([jid, o.experiment_id, k, o.n_queries, format(res.mean_diff, ".12g"),
                             format(res.t_statistic, ".12g"), format(res.p_value, ".12g"),
                             o.verdicts[k]])
    write_csv(cfg.out / "outcomes.csv", header, rows)
    return _write_agreement(cfg, r.matrices)


def cmd_analyze(cfg: RunConfig, args) -> dict:
    qips = _load_qips(cfg)
    gold = gold_labels(cfg, qips)
    sources = _verdict_sources(cfg)
    # analyse the QIPs every judge covers
    common = set(gold)
    for preds in sources.values():
        common &= set(preds)
    gold = {k: v for k, v in gold.items() if k in common}
    profiles = misprediction_join({j: {k: p[k] for k in common} for j, p in sources.items()}, gold)
    stats = overlap_stats(profiles, len(sources))
    spec = {}
    for q in qips:
        spec[q.query.query_id] = specificity_heuristic(q.query.text, q.query.specificity,
                                                       cfg.specificity_min_tokens)
    segs = segment_breakdown(profiles, spec, len(sources))
    rows = [[f"{label},{seg}", s.count, f"{s.percent:.1f}"] for s in segs for label, seg in [s.key]]
    write_csv(cfg.out / "analysis.csv", ["segment", "count", "percentage"], rows)
    grammar = {q.query.query_id: q.query.grammar for q in qips if q.query.grammar is not None}
    if grammar and all(p.query_id in grammar for p in profiles):
        gsegs = segment_breakdown(profiles, grammar, len(sources))
        write_csv(cfg.out / "analysis_grammar.csv", ["segment", "count", "percentage"],
                  [[f"{s.key[0]},{s.key[1]}", s.count, f"{s.percent:.1f}"] for s in gsegs])
    summary = {"judges": list(sources), "qips": len(gold), "mispredicted": stats.n_profiles,
               "all_wrong": stats.n_all_wrong, "all_wrong_fraction": round(stats.all_wrong_fraction, 6),
               "same_label": stats.n_same_label,
               "same_label_fraction": round(stats.same_label_fraction, 6),
               "undefined": stats.undefined}
    text = "\n".join(f"{k}: {v}" for k, v in summary.items()) + "\n\n" + format_table(
        ["segment", "count", "percentage"], rows)
    (cfg.out / "analysis_summary.txt").write_text(text, encoding="utf-8")
    return summary


def cmd_lab(cfg: RunConfig, args) -> dict:
    lab = dict(cfg.lab)
    lab.setdefault("seed", derive_seed(cfg.seed, "lab") % (2**32))
    tc = TrainConfig(**lab)
    if args.synthetic:
        from .synth import separable_texts
        texts, labels = separable_texts(args.synthetic, tc.seed)
    else:
        qips = _prepared_qips(cfg, _load_qips(cfg))
        gold = gold_labels(cfg, qips)
        variant = InputVariant(cfg.variant)
        pairs = [(render_input(q.query, q.item, variant), gold[q.key]) for q in qips if q.key in gold]
        texts, labels = [t for t, _ in pairs], [y for _, y in pairs]
    result = train(texts, labels, tc)
    write_csv(cfg.out / "history.csv", ["step", "lr", "val_micro_f1"],
              [[h.step, format(h.lr, ".12g"), format(h.val_micro_f1, ".6f")] for h in result.history])
    result.model.save(cfg.out / "checkpoint.json")
    X = featurize_all(texts[:8], tc.d_in)
    err = grad_check(result.model, X, labels[:8], tc.class_weights, max_entries=64, seed=tc.seed)
    summary = {"mode": tc.mode, "train_size": result.train_size, "val_size": result.val_size,
               "trainable_params": result.model.trainable_count(),
               "final_val_micro_f1": result.history[-1].val_micro_f1 if result.history else None,
               "final_lr": result.history[-1].lr if result.history else tc.learning_rate,
               "grad_check_max_rel_err": err}
    (cfg.out / "lab_summary.json").write_text(dumps(summary) + "\n", encoding="utf-8")
    return summary


def cmd_synth(cfg: RunConfig, args) -> dict:
    """Write a self-consistent fixture set (qips, annotations, experiments) into the output dir."""
    seed = derive_seed(cfg.seed, "synth")
    corpus = make_corpus(args.queries, 6, seed)
    planted = planted_experiments(args.n_experiments, n_queries=6, ranking_len=10, seed=seed)
    from .dataset import ItemRecord, QueryRecord
    exp_qips = []
    for (qid, iid), lab in sorted(planted.human_labels.items()):
        exp_qips.append(Qip(QueryRecord(qid, planted.query_text[qid]),
                            ItemRecord(iid, f"item {iid}"), lab))
    qips = corpus + exp_qips
    write_qips(cfg.out / "qips.jsonl", qips)
    anns = make_annotations(qips, 0.2, seed)
    write_jsonl(cfg.out / "annotations.jsonl",
                ({"query_id": a.query_id, "item_id": a.item_id, "round": a.round,
                  "label": a.label, "source": a.source} for a in anns))
    write_jsonl(cfg.out / "experiments.jsonl", experiments_to_rows(planted.experiments))
    return {"qips": len(qips), "annotations": len(anns), "experiments": len(planted.experiments)}


COMMANDS = {
    "ingest": cmd_ingest, "resolve": cmd_resolve, "stats": cmd_stats, "render": cmd_render,
    "judge": cmd_judge, "evaluate": cmd_evaluate, "reenact": cmd_reenact, "analyze": cmd_analyze,
    "lab": cmd_lab, "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config (JSON)")
    common.add_argument("--out", help="override paths.output_dir")
    common.add_argument("--qips")
    common.add_argument("--annotations")
    common.add_argument("--resolved")
    common.add_argument("--experiments")
    common.add_argument("--verdicts", action="append", metavar="JUDGE_ID=PATH",
                        help="verdict file for a judge; repeatable")
    common.add_argument("--seed", type=int)
    common.add_argument("--variant", type=int, choices=(1, 2, 3))
    common.add_argument("--judge", dest="judge_kind")
    common.add_argument("--judge-id")
    common.add_argument("--endpoint")
    common.add_argument("--concurrency", type=int)
    common.add_argument("--ks", help="comma-separated cutoffs, e.g. 1,5,10")
    common.add_argument("--alpha", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="releval", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"releval {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "stats":
            p.add_argument("--label-counts", help="JSON {label: count} instead of a corpus")
        if name == "reenact":
            p.add_argument("--from-counts", help="JSON of published agreement matrices")
        if name == "lab":
            p.add_argument("--synthetic", type=int, metavar="N",
                           help="train on N separable synthetic texts instead of the corpus")
        if name == "synth":
            p.add_argument("--queries", type=int, default=20)
            p.add_argument("--n-experiments", type=int, default=20)
    return parser


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    cwd = Path.cwd()
    for flag, attr in (("out", "output_dir"), ("qips", "qips"), ("annotations", "annotations"),
                       ("resolved", "resolved"), ("experiments", "experiments")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg.paths, attr, str((cwd / value).resolve()))
    for spec in args.verdicts or []:
        jid, sep, path = spec.partition("=")
        if not sep:
            raise InputError(f"--verdicts expects JUDGE_ID=PATH, got {spec!r}")
        cfg.paths.verdicts[jid] = str((cwd / path).resolve())
    if args.seed is not None:
        cfg.seed = args.seed
    if args.variant is not None:
        cfg.variant = args.variant
    if args.judge_kind is not None:
        cfg.judge.kind = args.judge_kind
    if args.judge_id is not None:
        cfg.judge.judge_id = args.judge_id
    if args.endpoint is not None:
        cfg.judge.endpoint = args.endpoint
    if args.concurrency is not None:
        cfg.concurrency_limit = args.concurrency
    if args.ks:
        cfg.ks = [int(k) for k in args.ks.split(",")]
    if args.alpha is not None:
        cfg.alpha = args.alpha
    return cfg


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), args)
        cfg.validate()
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / "effective_config.json").write_text(
            json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        summary = COMMANDS[args.command](cfg, args)
    except RelevalError as exc:
        _fail(exc.exit_code, exc)
        return exc.exit_code
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        _fail(1, exc)
        return 1
    except Exception as exc:  # anything else is a bug on our side
        log.exception("internal error")
        _fail(3, exc)
        return 3
    print(dumps({"status": "ok", "command": args.command, "summary": summary}))
    return 0


def _fail(code: int, exc: BaseException) -> None:
    print(dumps({"status": "error", "code": code, "type": exc.__class__.__name__,
                 "message": str(exc)}), file=sys.stderr)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
