"""File-based pipeline runner.

Every subcommand reads its inputs from files, writes its outputs atomically
into ``--out-dir``, and records a manifest (input content hashes, config,
seed) under ``<out-dir>/manifests/``. Stages communicate only through the
documented wire formats, so any stage can be re-run or replaced.

Config files are plain ``key = value`` lines; ``#`` starts a comment. See the
README for the key schema.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import ABUSIVE, HATER, NEUTRAL, __version__
from . import archive as arch
from . import classify, communities, embedding, graph as graphmod, labeling
from . import metrics as metricsmod
from . import topics as topicsmod
from . import trends

STAGES = [
    "crawl", "ingest", "chunk", "score-merge", "ensemble", "eval",
    "derive-threshold", "label-channels", "build-graph", "topic-features",
    "embed", "train-head", "communities", "trend", "report",
]


class CliError(Exception):
    """Validation failure reported as a one-line error with exit code 1."""


# ---------------------------------------------------------------------------
# config and io helpers


def parse_config(path: Path) -> dict[str, str]:
    cfg = {}
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise CliError(f"{path}:{line_no}: expected 'key = value'")
        key, value = stripped.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def cfg_float(cfg, key, default):
    return float(cfg.get(key, default))


def cfg_int(cfg, key, default):
    return int(cfg.get(key, default))


def cfg_bool(cfg, key, default):
    raw = cfg.get(key)
    if raw is None:
        return default
    return raw.lower() in ("1", "true", "yes")


def atomic_write(path: Path, data: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(data)
    os.replace(tmp, path)


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise CliError(f"missing input {path} (produced by '{produced_by}')")
    return path


class Runner:
    """Shared state for one subcommand invocation."""

    def __init__(self, args):
        self.args = args
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.cfg = parse_config(Path(args.config)) if args.config else {}
        self.seed = args.seed if args.seed is not None else cfg_int(self.cfg, "seed", 0)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def read_input(self, path: Path, produced_by: str = "an earlier stage") -> Path:
        require(path, produced_by)
        self.inputs[str(path)] = sha256_file(path)
        return path

    def write_output(self, name: str, data: str):
        atomic_write(self.path(name), data)
        self.outputs.append(name)

    def write_manifest(self, subcommand: str, extra_config: dict):
        manifest = {
            "subcommand": subcommand,
            "version": __version__,
            "seed": self.seed,
            "config": extra_config,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": sorted(self.outputs),
        }
        atomic_write(
            self.out_dir / "manifests" / f"{subcommand}.json",
            json.dumps(manifest, indent=2, sort_keys=True) + "\n",
        )


def load_jsonl(path: Path):
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as exc:
            raise CliError(f"{path}:{line_no}: invalid JSON ({exc.msg})")


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def message_key_str(channel_id: str, message_id: int) -> str:
    return f"{channel_id}:{message_id}"


def split_message_key(key: str) -> tuple[str, int]:
    channel_id, _, message_id = key.rpartition(":")
    if not channel_id:
        raise CliError(f"malformed message_key {key!r}")
    return channel_id, int(message_id)


def load_archive_files(runner: Runner) -> arch.Archive:
    messages = runner.read_input(runner.path("messages.jsonl"), "ingest or crawl")
    channels = runner.path("channels.csv")
    crawl_log = runner.path("crawl_log.csv")
    with open(messages) as mfh:
        channels_fh = open(channels) if channels.exists() else None
        crawl_fh = open(crawl_log) if crawl_log.exists() else None
        try:
            if channels_fh:
                runner.inputs[str(channels)] = sha256_file(channels)
            if crawl_fh:
                runner.inputs[str(crawl_log)] = sha256_file(crawl_log)
            return arch.load_archive(mfh, channels_fh, crawl_fh)
        finally:
            for fh in (channels_fh, crawl_fh):
                if fh:
                    fh.close()


def write_archive(runner: Runner, archive: arch.Archive):
    runner.write_output("messages.jsonl", arch.export_messages(archive))
    runner.write_output("channels.csv", arch.export_channels(archive))
    runner.write_output("crawl_log.csv", arch.export_crawl_log(archive))


def parse_ts(value: str) -> datetime:
    ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# stages


def stage_crawl(runner: Runner):
    cfg = runner.cfg
    universe_path = runner.read_input(
        Path(cfg.get("messages", "messages.jsonl")), "the message universe fixture"
    )
    seeds_path = runner.read_input(Path(cfg.get("seeds", "seeds.txt")), "seed list")
    with open(universe_path) as fh:
        universe = arch.parse_archive(fh)
    seeds = [s.strip() for s in seeds_path.read_text().splitlines() if s.strip()]
    crawl_cfg = arch.CrawlConfig(
        rounds=cfg_int(cfg, "crawl_rounds", 3),
        round3_min_referrers=cfg_int(cfg, "crawl_min_referrers", 5),
        period_start=parse_ts(cfg["period_start"]) if "period_start" in cfg else None,
        period_end=parse_ts(cfg["period_end"]) if "period_end" in cfg else None,
    )

    def fetcher(channel_id):
        if channel_id not in universe.channels:
            return None
        return universe.messages.get(channel_id, [])

    result = arch.snowball_crawl(fetcher, seeds, crawl_cfg)
    write_archive(runner, result)
    runner.write_manifest("crawl", {"rounds": crawl_cfg.rounds,
                                    "min_referrers": crawl_cfg.round3_min_referrers})


def stage_ingest(runner: Runner):
    cfg = runner.cfg
    messages_path = runner.read_input(
        Path(cfg.get("messages", "messages.jsonl")), "raw message export"
    )
    with open(messages_path) as fh:
        try:
            archive = arch.parse_archive(fh)
        except arch.ArchiveParseError as exc:
            raise CliError(f"{messages_path}: {exc}")
    if "period_start" in cfg and "period_end" in cfg:
        archive = arch.filter_by_period(
            archive, parse_ts(cfg["period_start"]), parse_ts(cfg["period_end"])
        )
    write_archive(runner, archive)
    runner.write_manifest("ingest", {"messages": str(messages_path)})


def stage_chunk(runner: Runner):
    archive = load_archive_files(runner)
    max_words = cfg_int(runner.cfg, "max_chunk_words", classify.MAX_CHUNK_WORDS)
    lines = []
    for msg in archive.all_messages():
        for chunk in classify.chunk_message(msg.text, msg.key, max_words):
            lines.append(json.dumps({
                "channel_id": msg.channel_id,
                "message_id": msg.message_id,
                "chunk_index": chunk.index,
                "text": chunk.text,
            }, ensure_ascii=False, sort_keys=True))
    runner.write_output("chunks.jsonl", "".join(line + "\n" for line in lines))
    runner.write_manifest("chunk", {"max_chunk_words": max_words})


def stage_score_merge(runner: Runner):
    cfg = runner.cfg
    records = []
    score_files = [p for p in cfg.get("chunk_scores", "").split(",") if p.strip()]
    for raw in score_files:
        path = runner.read_input(Path(raw.strip()), "an external scorer")
        for rec in load_jsonl(path):
            try:
                records.append((
                    (str(rec["channel_id"]), int(rec["message_id"])),
                    int(rec.get("chunk_index", 0)),
                    str(rec["classifier_id"]),
                    float(rec["p_abusive"]),
                ))
            except (KeyError, ValueError, TypeError) as exc:
                raise CliError(f"{path}: bad score record ({exc})")
    if "baseline_labeled" in cfg:
        labeled_path = runner.read_input(Path(cfg["baseline_labeled"]), "labeling")
        labeled = [
            (rec["text"], rec["label"]) for rec in load_jsonl(labeled_path)
        ]
        model = classify.baseline_train(labeled, seed=runner.seed)
        chunks_path = runner.read_input(runner.path("chunks.jsonl"), "chunk")
        for rec in load_jsonl(chunks_path):
            records.append((
                (str(rec["channel_id"]), int(rec["message_id"])),
                int(rec["chunk_index"]),
                "baseline",
                classify.baseline_predict(model, rec["text"]),
            ))
    if not records:
        raise CliError("no scores: set chunk_scores and/or baseline_labeled")
    try:
        table = classify.merge_chunk_scores(records)
    except ValueError as exc:
        raise CliError(str(exc))
    lines = []
    for (channel_id, message_id), classifier_id in sorted(table.scores):
        lines.append(json.dumps({
            "channel_id": channel_id,
            "message_id": message_id,
            "classifier_id": classifier_id,
            "p_abusive": table.scores[((channel_id, message_id), classifier_id)],
        }, sort_keys=True))
    runner.write_output("scores.jsonl", "".join(line + "\n" for line in lines))
    runner.write_manifest("score-merge", {"score_files": score_files,
                                          "baseline": "baseline_labeled" in cfg})


def load_score_table(runner: Runner) -> classify.ScoreTable:
    path = runner.read_input(runner.path("scores.jsonl"), "score-merge")
    table = classify.ScoreTable()
    for rec in load_jsonl(path):
        try:
            table.add(classify.ScoreRecord(
                (str(rec["channel_id"]), int(rec["message_id"])),
                str(rec["classifier_id"]),
                float(rec["p_abusive"]),
            ))
        except (KeyError, ValueError, TypeError) as exc:
            raise CliError(f"{path}: bad score record ({exc})")
    return table


def stage_ensemble(runner: Runner):
    cfg = runner.cfg
    table = load_score_table(runner)
    t = cfg_int(cfg, "ensemble_t", 3)
    tau = cfg_float(cfg, "tau", 0.5)
    ids = [c for c in cfg.get("classifiers", "").split(",") if c.strip()] or None
    try:
        votes, missing = classify.combine_scores(table, t, tau, ids)
    except ValueError as exc:
        raise CliError(str(exc))
    lines = []
    for vote in votes:
        channel_id, message_id = vote.message_key
        lines.append(json.dumps({
            "channel_id": channel_id,
            "message_id": message_id,
            "label": vote.final_label,
            "votes": vote.abusive_votes,
        }, sort_keys=True))
    runner.write_output("labels.jsonl", "".join(line + "\n" for line in lines))
    runner.write_manifest("ensemble", {"t": t, "tau": tau, "missing_votes": missing})


def load_labels(runner: Runner) -> dict[tuple[str, int], str]:
    path = runner.read_input(runner.path("labels.jsonl"), "ensemble")
    labels = {}
    for rec in load_jsonl(path):
        labels[(str(rec["channel_id"]), int(rec["message_id"]))] = rec["label"]
    return labels


def stage_eval(runner: Runner):
    cfg = runner.cfg
    ann_path = runner.read_input(
        Path(cfg.get("annotations", "annotations.csv")), "annotation export"
    )
    table = metricsmod.AnnotationTable()
    with open(ann_path) as fh:
        for row in csv.DictReader(fh):
            table.add(row["message_key"], row["annotator_id"], row["label"])
    resolved = {
        item: label
        for item, label in metricsmod.resolve_table(table).items()
        if label is not None
    }
    if not resolved:
        raise CliError("no annotation reached a majority label")
    tau = cfg_float(cfg, "tau", 0.5)
    score_table = load_score_table(runner)
    report = {
        "alpha": round(metricsmod.krippendorff_alpha(table), 4),
        "n_items": len(resolved),
        "classifiers": {},
    }
    for cid in score_table.classifiers():
        y_true, y_pred = [], []
        for item, label in sorted(resolved.items()):
            p = score_table.get(split_message_key(item), cid)
            if p is None:
                continue
            y_true.append(label)
            y_pred.append(classify.apply_threshold(p, tau))
        if y_true:
            cm = metricsmod.confusion(y_true, y_pred)
            report["classifiers"][cid] = metricsmod.metrics_report(cm)
    message_labels = load_labels(runner)
    y_true, y_pred = [], []
    for item, label in sorted(resolved.items()):
        pred = message_labels.get(split_message_key(item))
        if pred is not None:
            y_true.append(label)
            y_pred.append(pred)
    if not y_true:
        raise CliError("no overlap between annotations and ensemble labels")
    report["ensemble"] = metricsmod.metrics_report(
        metricsmod.confusion(y_true, y_pred)
    )
    runner.write_output("metrics_report.json", dump_json(report))
    runner.write_manifest("eval", {"tau": tau})
    if runner.args.json:
        print(dump_json(report), end="")


def stage_derive_threshold(runner: Runner):
    cfg = runner.cfg
    pi = cfg_float(cfg, "pi", 0.062)
    epsilon = cfg_float(cfg, "epsilon", 0.01)
    if runner.args.p_false is not None or "p_false" in cfg:
        p_false = (
            runner.args.p_false
            if runner.args.p_false is not None
            else float(cfg["p_false"])
        )
        try:
            k = labeling.min_abusive_count(p_false, epsilon)
        except ValueError as exc:
            raise CliError(str(exc))
        derivation = {
            "pi": pi, "fpr": None, "tpr": None,
            "p_false": p_false, "epsilon": epsilon, "k": k,
        }
    else:
        report_path = runner.read_input(runner.path("metrics_report.json"), "eval")
        report = json.loads(report_path.read_text())
        cm = metricsmod.ConfusionMatrix(tuple(
            tuple(row) for row in report["ensemble"]["confusion"]
        ))
        try:
            derivation = labeling.derive_threshold(cm, pi, epsilon).to_dict()
        except ValueError as exc:
            raise CliError(str(exc))
    runner.write_output("threshold_derivation.json", dump_json(derivation))
    runner.write_manifest("derive-threshold", {"pi": pi, "epsilon": epsilon})
    if runner.args.json:
        print(dump_json(derivation), end="")
    else:
        print(f"k = {derivation['k']}")


def stage_label_channels(runner: Runner):
    cfg = runner.cfg
    if "k" in cfg:
        k = int(cfg["k"])
    else:
        derivation_path = runner.read_input(
            runner.path("threshold_derivation.json"), "derive-threshold"
        )
        k = json.loads(derivation_path.read_text())["k"]
    message_labels = load_labels(runner)
    counts: dict[str, int] = {}
    for (channel_id, _), label in message_labels.items():
        counts.setdefault(channel_id, 0)
        if label == ABUSIVE:
            counts[channel_id] += 1
    rows = [
        [cl.channel_id, cl.abusive_count, cl.label]
        for cl in labeling.label_channels(counts, k)
    ]
    runner.write_output(
        "channel_labels.csv", csv_text(["channel_id", "abusive_count", "label"], rows)
    )
    runner.write_manifest("label-channels", {"k": k})


def stage_build_graph(runner: Runner):
    cfg = runner.cfg
    archive = load_archive_files(runner)
    german_only = cfg_bool(cfg, "graph_german_only", False)
    start = parse_ts(cfg["graph_period_start"]) if "graph_period_start" in cfg else None
    end = parse_ts(cfg["graph_period_end"]) if "graph_period_end" in cfg else None
    if start is not None and end is not None:
        archive = arch.filter_by_period(archive, start, end)

    def node_filter(channel: arch.Channel) -> bool:
        if german_only and not channel.is_german:
            return False
        if start is not None and not archive.messages.get(channel.channel_id):
            return False
        return True

    g = graphmod.build_graph(archive, node_filter)
    runner.write_output("graph_edges.csv", graphmod.export_graph(g, graphmod.EDGE_CSV))
    runner.write_output("graph.graphml", graphmod.export_graph(g, graphmod.GRAPHML))
    try:
        stats = graphmod.graph_stats(g).to_dict()
    except ValueError as exc:
        raise CliError(str(exc))
    runner.write_output("graph_stats.json", dump_json(stats))
    runner.write_manifest("build-graph", {"german_only": german_only})
    if runner.args.json:
        print(dump_json(stats), end="")


def load_topics(path: Path) -> list[topicsmod.TopicVector]:
    entries = json.loads(path.read_text())
    out = []
    for entry in entries:
        try:
            out.append(topicsmod.TopicVector(
                topic_id=entry["topic_id"],
                vector=tuple(entry["vector"]),
                descriptive_terms=tuple(entry.get("terms", ())),
            ))
        except (KeyError, ValueError) as exc:
            raise CliError(f"{path}: bad topic entry ({exc})")
    return out


def stage_topic_features(runner: Runner):
    cfg = runner.cfg
    topics_path = runner.read_input(Path(cfg.get("topics", "topics.json")), "topic export")
    docs_path = runner.read_input(
        Path(cfg.get("doc_embeddings", "doc_embeddings.jsonl")), "document embedder"
    )
    theta = cfg_float(cfg, "theta", 0.5)
    topic_vectors = load_topics(topics_path)
    topic_ids = [t.topic_id for t in topic_vectors]
    hits_by_channel: dict[str, list[set[str]]] = {}
    for rec in load_jsonl(docs_path):
        try:
            channel_id = str(rec["channel_id"])
            vector = rec["vector"]
        except KeyError as exc:
            raise CliError(f"{docs_path}: bad embedding record ({exc})")
        hits = topicsmod.assign_topics(vector, topic_vectors, theta)
        hits_by_channel.setdefault(channel_id, []).append(hits)
    dists = [
        topicsmod.channel_topic_distribution(cid, hits_by_channel[cid], topic_ids)
        for cid in sorted(hits_by_channel)
    ]
    rows = [
        [d.channel_id, *[f"{p:.10g}" for p in d.probs], d.hit_count] for d in dists
    ]
    runner.write_output(
        "topic_distributions.csv",
        csv_text(["channel_id", *topic_ids, "hit_count"], rows),
    )
    eligible = [d for d in dists if d.hit_count > 0]
    if len(eligible) >= 2:
        matrix = topicsmod.similarity_matrix(eligible)
        tree = topicsmod.hierarchical_cluster(matrix)
        payload = tree.to_dict()
        payload["channel_ids"] = [d.channel_id for d in eligible]
        runner.write_output("cluster_tree.json", dump_json(payload))
    runner.write_manifest("topic-features", {"theta": theta})


def load_topic_features(runner: Runner) -> tuple[dict[str, list[float]], int]:
    path = runner.read_input(runner.path("topic_distributions.csv"), "topic-features")
    features = {}
    dim = 0
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 2  # channel_id and hit_count bracket the topics
        for row in reader:
            features[row[0]] = [float(v) for v in row[1 : 1 + dim]]
    return features, dim


def stage_embed(runner: Runner):
    cfg = runner.cfg
    edges_path = runner.read_input(runner.path("graph_edges.csv"), "build-graph")
    g = graphmod.import_graph(edges_path.read_text(), graphmod.EDGE_CSV)
    features, dim = load_topic_features(runner)
    node_features = {
        node: features.get(node, [0.0] * dim) for node in g.nodes
    }
    sample_raw = cfg.get("dgi_sample_size", "none").lower()
    dgi_cfg = embedding.DGIConfig(
        epochs_max=cfg_int(cfg, "dgi_epochs_max", 500),
        patience=cfg_int(cfg, "dgi_patience", 20),
        learning_rate=cfg_float(cfg, "dgi_learning_rate", 1e-3),
        sample_size=None if sample_raw in ("none", "full") else int(sample_raw),
        activation=cfg.get("dgi_activation", "relu"),
        seed=runner.seed,
    )
    if not g.nodes:
        raise CliError("graph has no nodes; nothing to embed")
    try:
        result = embedding.dgi_train(g, node_features, dgi_cfg)
    except FloatingPointError as exc:
        raise CliError(str(exc))
    embeddings = embedding.encode_all(g, node_features, result.params)
    lines = [
        json.dumps({"channel_id": node,
                    "vector": [float(v) for v in embeddings[node]]})
        for node in sorted(embeddings)
    ]
    runner.write_output(
        "channel_embeddings.jsonl", "".join(line + "\n" for line in lines)
    )
    runner.write_output("dgi_training.json", dump_json({
        "loss_history": result.loss_history,
        "stopped_epoch": result.stopped_epoch,
        "epochs_max": dgi_cfg.epochs_max,
    }))
    runner.write_manifest("embed", {"epochs_max": dgi_cfg.epochs_max,
                                    "patience": dgi_cfg.patience,
                                    "learning_rate": dgi_cfg.learning_rate})


def load_embeddings(runner: Runner) -> dict[str, list[float]]:
    path = runner.read_input(runner.path("channel_embeddings.jsonl"), "embed")
    return {
        str(rec["channel_id"]): [float(v) for v in rec["vector"]]
        for rec in load_jsonl(path)
    }


def load_channel_labels(runner: Runner) -> dict[str, str]:
    path = runner.read_input(runner.path("channel_labels.csv"), "label-channels")
    with open(path) as fh:
        return {row["channel_id"]: row["label"] for row in csv.DictReader(fh)}


def stage_train_head(runner: Runner):
    cfg = runner.cfg
    embeddings = load_embeddings(runner)
    channel_labels = load_channel_labels(runner)
    nodes = sorted(set(embeddings) & set(channel_labels))
    if not nodes:
        raise CliError("no channels with both an embedding and a label")
    x = np.array([embeddings[n] for n in nodes])
    y = [channel_labels[n] for n in nodes]
    head_cfg = embedding.HeadConfig(
        epochs_max=cfg_int(cfg, "head_epochs_max", 150),
        patience=cfg_int(cfg, "head_patience", 60),
        min_delta=cfg_float(cfg, "head_min_delta", 0.05),
        learning_rate=cfg_float(cfg, "head_learning_rate", 1e-2),
        hidden_dim=cfg_int(cfg, "head_hidden_dim", 16),
        seed=runner.seed,
    )
    try:
        head, report = embedding.train_head(x, y, head_cfg)
    except ValueError as exc:
        raise CliError(str(exc))
    runner.write_output("head_model.json", dump_json({
        "params": head.to_dict(),
        "classes": list(embedding.HEAD_CLASSES),
        "hidden_dim": head_cfg.hidden_dim,
        "seed": runner.seed,
    }))
    payload = report.to_dict()
    payload["channel_ids"] = nodes
    runner.write_output("train_report.json", dump_json(payload))
    runner.write_manifest("train-head", {"epochs_max": head_cfg.epochs_max})
    if runner.args.json:
        print(dump_json({"macro_f1": report.macro_f1,
                         "f1_neutral": report.f1_neutral,
                         "f1_hater": report.f1_hater}), end="")


def stage_communities(runner: Runner):
    cfg = runner.cfg
    embeddings = load_embeddings(runner)
    channel_labels = load_channel_labels(runner)
    seeds_path = Path(cfg.get("seeds", "seeds.txt"))
    seeds = set()
    if seeds_path.exists():
        runner.inputs[str(seeds_path)] = sha256_file(seeds_path)
        seeds = {s.strip() for s in seeds_path.read_text().splitlines() if s.strip()}
    nodes = sorted(embeddings)
    if len(nodes) < 3:
        raise CliError("need at least 3 embedded channels")
    x = np.array([embeddings[n] for n in nodes])
    points = communities.reduce_2d(x)
    min_pts = cfg_int(cfg, "dbscan_min_pts", 5)
    if "dbscan_eps" in cfg:
        eps = float(cfg["dbscan_eps"])
    else:
        eps = communities.median_knn_distance(points, k=min(4, len(nodes) - 1))
        if eps == 0:
            raise CliError("degenerate projection; set dbscan_eps explicitly")
    labels = communities.dbscan(points, eps, min_pts)
    assignment = {n: int(c) for n, c in zip(nodes, labels)}
    missing = [n for n in nodes if n not in channel_labels]
    if missing:
        raise CliError(f"channel without hater/neutral label: {missing[0]}")
    stats = communities.community_stats(assignment, channel_labels, seeds)
    rows = [
        [n, f"{points[i][0]:.10g}", f"{points[i][1]:.10g}", assignment[n],
         channel_labels[n], int(n in seeds)]
        for i, n in enumerate(nodes)
    ]
    runner.write_output("communities.csv", csv_text(
        ["channel_id", "x", "y", "community_id", "label", "is_seed"], rows
    ))
    runner.write_output("community_report.json", dump_json({
        "eps": eps,
        "min_pts": min_pts,
        "communities": [s.to_dict() for s in stats],
    }))
    if runner.args.plot:
        _scatter_svg(runner, points, labels, nodes, channel_labels, seeds)
    runner.write_manifest("communities", {"eps": eps, "min_pts": min_pts})


def _scatter_svg(runner, points, labels, nodes, channel_labels, seeds):
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(11, 5))
    axes[0].scatter(points[:, 0], points[:, 1], c=labels, cmap="tab10", s=14)
    axes[0].set_title("communities")
    hater_mask = np.array([channel_labels[n] == HATER for n in nodes])
    axes[1].scatter(points[~hater_mask, 0], points[~hater_mask, 1], c="gray", s=14)
    axes[1].scatter(points[hater_mask, 0], points[hater_mask, 1], c="red", s=14)
    axes[1].set_title("hater labels (red)")
    for ax in axes:
        seed_mask = np.array([n in seeds for n in nodes])
        ax.scatter(points[seed_mask, 0], points[seed_mask, 1],
                   marker="s", s=60, facecolors="none", edgecolors="black")
    out = runner.path("communities.svg")
    fig.savefig(out, metadata={"Date": None})
    plt.close(fig)
    runner.outputs.append("communities.svg")


def stage_trend(runner: Runner):
    cfg = runner.cfg
    archive = load_archive_files(runner)
    message_labels = load_labels(runner)
    triples = []
    for msg in archive.all_messages():
        label = message_labels.get(msg.key)
        if label is None:
            continue
        triples.append((msg.channel_id, msg.timestamp, label == ABUSIVE))
    if not triples:
        raise CliError("no labeled messages; run ensemble first")
    if "trend_start" in cfg and "trend_end" in cfg:
        window = (cfg["trend_start"], cfg["trend_end"])
    else:
        months = sorted({f"{ts.year:04d}-{ts.month:02d}" for _, ts, _ in triples})
        window = (months[0], months[-1])
    seeds = set(arch.seed_channels(archive))
    subsets = {trends.SUBSET_ALL: None, trends.SUBSET_SEEDS: seeds}
    edges_path = runner.path("graph_edges.csv")
    if edges_path.exists():
        runner.inputs[str(edges_path)] = sha256_file(edges_path)
        g = graphmod.import_graph(edges_path.read_text(), graphmod.EDGE_CSV)
        graph_seeds = seeds & g.nodes
        subsets[trends.SUBSET_FIRST_DEGREE] = graphmod.first_degree_network(
            g, graph_seeds
        )
    rows = []
    prevalence = {}
    for subset_name, channel_subset in subsets.items():
        series = trends.monthly_series(triples, window, subset_name, channel_subset)
        rows.extend(
            [m, s, t, a, f"{sh:.10g}"] for m, s, t, a, sh in trends.series_rows(series)
        )
        if any(b.total for b in series.buckets):
            prevalence[subset_name] = trends.overall_prevalence(series)
    runner.write_output("prevalence.csv", csv_text(
        ["month", "subset", "total", "abusive", "share"], rows
    ))
    runner.write_output("prevalence_summary.json", dump_json(prevalence))
    runner.write_manifest("trend", {"window": list(window)})
    if runner.args.json:
        print(dump_json(prevalence), end="")


def stage_report(runner: Runner):
    pieces = {
        "metrics": ("metrics_report.json", "eval"),
        "threshold": ("threshold_derivation.json", "derive-threshold"),
        "graph_stats": ("graph_stats.json", "build-graph"),
        "train": ("train_report.json", "train-head"),
        "communities": ("community_report.json", "communities"),
        "prevalence": ("prevalence_summary.json", "trend"),
    }
    report = {}
    for key, (name, producer) in pieces.items():
        path = runner.read_input(runner.path(name), producer)
        report[key] = json.loads(path.read_text())
    runner.write_output("report.json", dump_json(report))
    runner.write_manifest("report", {})
    if runner.args.json:
        print(dump_json(report), end="")


HANDLERS = {
    "crawl": stage_crawl,
    "ingest": stage_ingest,
    "chunk": stage_chunk,
    "score-merge": stage_score_merge,
    "ensemble": stage_ensemble,
    "eval": stage_eval,
    "derive-threshold": stage_derive_threshold,
    "label-channels": stage_label_channels,
    "build-graph": stage_build_graph,
    "topic-features": stage_topic_features,
    "embed": stage_embed,
    "train-head": stage_train_head,
    "communities": stage_communities,
    "trend": stage_trend,
    "report": stage_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hatewatch",
        description="Abusive-message and hateful-channel detection pipeline",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for stage in STAGES:
        p = sub.add_parser(stage)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out-dir", default="out", help="pipeline output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--json", action="store_true",
                       help="print machine-readable results to stdout")
        p.add_argument("--plot", action="store_true",
                       help="also write SVG plots where supported")
        if stage == "derive-threshold":
            p.add_argument("--p-false", type=float, default=None,
                           help="use this false-discovery probability directly")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    lock = Path(args.out_dir) / ".lock"
    try:
        runner = Runner(args)
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.close(fd)
        except FileExistsError:
            raise CliError(f"output directory is locked by another run ({lock})")
        try:
            HANDLERS[args.subcommand](runner)
        finally:
            lock.unlink(missing_ok=True)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (arch.ArchiveError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
