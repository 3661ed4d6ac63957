import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, describe, expect, it } from "vitest";

import { runCli } from "../src/cli.js";
import {
  TOPIC_NAMES,
  docEmbeddingSchema,
  norm,
  parseJsonl,
  scoreRecordSchema,
} from "../src/schema.js";

/**
 * Bridge outputs must be consumable by the main pipeline binary with exit
 * code 0. These tests drive the real pipeline via python3.
 */

const work = mkdtempSync(join(tmpdir(), "bridge-it-"));
const out = join(work, "out");
const cfgPath = join(work, "pipeline.cfg");

function pipeline(stage: string): void {
  execFileSync("python3", [
    "-m", "hatewatch.cli", stage, "--config", cfgPath,
    "--out-dir", out, "--seed", "5",
  ], { stdio: "pipe" });
}

function writeFixtures() {
  const sentence = (i: number) =>
    `Satz nummer ${i} enthaelt ein paar woerter. `;
  const messages = [];
  let id = 0;
  for (const channel of ["alpha", "beta", "gamma"]) {
    for (let m = 0; m < 4; m++) {
      id++;
      const nSentences = 1 + ((id * 7) % 5);
      messages.push({
        message_id: id,
        channel_id: channel,
        timestamp: `2020-0${1 + (m % 3)}-10T00:00:00Z`,
        text: Array.from({ length: nSentences }, (_, s) => sentence(s)).join("").trim(),
        forwarded_from: null,
        mentions: [],
        lang: "de",
      });
    }
  }
  writeFileSync(
    join(work, "messages.jsonl"),
    messages.map((m) => JSON.stringify(m)).join("\n") + "\n"
  );
  const artifact = [...TOPIC_NAMES, "Spare"].map((name, i) => ({
    topic_id: name,
    terms: [`${name.toLowerCase()}_a`, `${name.toLowerCase()}_b`],
    vector: Array.from({ length: 16 }, (_, j) => ((i * 16 + j) % 7) - 3 + 0.1),
  }));
  writeFileSync(join(work, "artifact.json"), JSON.stringify(artifact));
  writeFileSync(cfgPath, [
    `messages = ${join(work, "messages.jsonl")}`,
    `chunk_scores = ${join(out, "bridge_a.jsonl")},${join(out, "bridge_b.jsonl")}`,
    "ensemble_t = 1",
    "tau = 0.5",
    `topics = ${join(out, "topics.json")}`,
    `doc_embeddings = ${join(out, "doc_embeddings.jsonl")}`,
    "theta = 0.3",
  ].join("\n") + "\n");
}

describe("bridge-to-pipeline integration (stub mode)", () => {
  it("pipeline ensemble consumes bridge scores with exit 0", async () => {
    writeFixtures();
    pipeline("ingest");
    pipeline("chunk");
    for (const id of ["a", "b"]) {
      const code = await runCli([
        "score-chunks", "--stub",
        "--chunks", join(out, "chunks.jsonl"),
        "--out", join(out, `bridge_${id}.jsonl`),
        "--classifier-id", `stub-${id}`,
      ]);
      expect(code).toBe(0);
      const records = parseJsonl(
        readFileSync(join(out, `bridge_${id}.jsonl`), "utf-8"),
        scoreRecordSchema,
        "bridge scores"
      );
      expect(records.length).toBeGreaterThan(0);
      for (const r of records) {
        expect(r.p_abusive).toBeGreaterThanOrEqual(0);
        expect(r.p_abusive).toBeLessThanOrEqual(1);
      }
    }
    pipeline("score-merge");
    pipeline("ensemble");
    const labels = readFileSync(join(out, "labels.jsonl"), "utf-8");
    expect(labels.trim().split("\n")).toHaveLength(12);
    console.log("PASS: pipeline ensemble consumed bridge scores (exit 0)");
  });

  it("pipeline topic-features consumes bridge topics and embeddings", async () => {
    expect(
      await runCli([
        "export-topics",
        "--artifact", join(work, "artifact.json"),
        "--select", TOPIC_NAMES.join(","),
        "--out", join(out, "topics.json"),
      ])
    ).toBe(0);
    expect(
      await runCli([
        "embed-docs", "--stub", "--dim", "16",
        "--chunks", join(out, "chunks.jsonl"),
        "--out", join(out, "doc_embeddings.jsonl"),
      ])
    ).toBe(0);

    const topics = JSON.parse(readFileSync(join(out, "topics.json"), "utf-8"));
    expect(topics).toHaveLength(9);
    for (const t of topics) {
      expect(Math.abs(norm(t.vector) - 1)).toBeLessThan(1e-6);
    }
    const docs = parseJsonl(
      readFileSync(join(out, "doc_embeddings.jsonl"), "utf-8"),
      docEmbeddingSchema,
      "doc embeddings"
    );
    for (const d of docs) {
      expect(Math.abs(norm(d.vector) - 1)).toBeLessThan(1e-6);
    }

    pipeline("topic-features");
    const header = readFileSync(join(out, "topic_distributions.csv"), "utf-8")
      .split("\n")[0];
    expect(header).toBe(`channel_id,${TOPIC_NAMES.join(",")},hit_count`);
    console.log("PASS: pipeline topic-features consumed bridge outputs (exit 0)");
  });
});

afterAll(() => {
  // leave the temp dir for inspection on failure; nothing to clean up on CI
});
