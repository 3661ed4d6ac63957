#!/usr/bin/env node
import { readFileSync, renameSync, writeFileSync } from "node:fs";
import { parseArgs } from "node:util";

import { SchemaError, toJsonl } from "./schema.js";
import { CredentialError } from "./remote.js";
import { ScorerSpec, loadChunks, scoreChunks } from "./scoreChunks.js";
import { TopicArtifact, embedDocuments, exportTopics } from "./embed.js";

const USAGE = `usage:
  hatewatch-bridge score-chunks --chunks chunks.jsonl --out scores.jsonl
      --classifier-id ID [--stub | --endpoint URL --credential-env VAR]
  hatewatch-bridge embed-docs --chunks chunks.jsonl --out doc_embeddings.jsonl [--stub] [--dim N]
  hatewatch-bridge export-topics --artifact topics_artifact.json --select id1,...,id9 --out topics.json
`;

function atomicWrite(path: string, data: string) {
  const tmp = path + ".tmp";
  writeFileSync(tmp, data);
  renameSync(tmp, path);
}

function need(value: string | undefined, flag: string): string {
  if (!value) throw new SchemaError(`missing required flag ${flag}`);
  return value;
}

async function cmdScoreChunks(args: string[]) {
  const { values } = parseArgs({
    args,
    options: {
      chunks: { type: "string" },
      out: { type: "string" },
      "classifier-id": { type: "string" },
      stub: { type: "boolean", default: false },
      endpoint: { type: "string" },
      "credential-env": { type: "string" },
      "batch-size": { type: "string" },
    },
  });
  const chunksPath = need(values.chunks, "--chunks");
  const outPath = need(values.out, "--out");
  const classifierId = need(values["classifier-id"], "--classifier-id");
  let spec: ScorerSpec;
  if (values.stub) {
    spec = { kind: "stub", classifierId };
  } else {
    spec = {
      kind: "remote-api",
      classifierId,
      endpoint: need(values.endpoint, "--endpoint"),
      credentialEnv: need(values["credential-env"], "--credential-env"),
      batchSize: values["batch-size"] ? Number(values["batch-size"]) : undefined,
    };
  }
  const chunks = loadChunks(readFileSync(chunksPath, "utf-8"), chunksPath);
  const { records, failures } = await scoreChunks(chunks, spec);
  atomicWrite(outPath, toJsonl(records));
  if (failures.length) {
    atomicWrite(outPath + ".errors", toJsonl(failures));
    console.error(`${failures.length} chunk(s) permanently failed; see ${outPath}.errors`);
  }
}

async function cmdEmbedDocs(args: string[]) {
  const { values } = parseArgs({
    args,
    options: {
      chunks: { type: "string" },
      out: { type: "string" },
      stub: { type: "boolean", default: false },
      dim: { type: "string" },
    },
  });
  const chunksPath = need(values.chunks, "--chunks");
  const outPath = need(values.out, "--out");
  if (!values.stub) {
    // a sentence-transformer runtime is a deliberate non-dependency here
    throw new SchemaError(
      "only --stub embedding is available in this build; export vectors from your model separately"
    );
  }
  const dim = values.dim ? Number(values.dim) : 16;
  const chunks = loadChunks(readFileSync(chunksPath, "utf-8"), chunksPath);
  const { stubEmbed } = await import("./stub.js");
  const embeddings = embedDocuments(chunks, (text) => stubEmbed(text, dim));
  atomicWrite(outPath, toJsonl(embeddings));
}

async function cmdExportTopics(args: string[]) {
  const { values } = parseArgs({
    args,
    options: {
      artifact: { type: "string" },
      select: { type: "string" },
      out: { type: "string" },
    },
  });
  const artifactPath = need(values.artifact, "--artifact");
  const outPath = need(values.out, "--out");
  const selected = need(values.select, "--select").split(",").map((s) => s.trim());
  const artifact = JSON.parse(
    readFileSync(artifactPath, "utf-8")
  ) as TopicArtifact[];
  const topics = exportTopics(artifact, selected);
  atomicWrite(outPath, JSON.stringify(topics, null, 2) + "\n");
}

export async function runCli(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  try {
    switch (command) {
      case "score-chunks":
        await cmdScoreChunks(rest);
        return 0;
      case "embed-docs":
        await cmdEmbedDocs(rest);
        return 0;
      case "export-topics":
        await cmdExportTopics(rest);
        return 0;
      default:
        process.stderr.write(USAGE);
        return 2;
    }
  } catch (err) {
    if (err instanceof SchemaError || err instanceof CredentialError) {
      console.error(`error: ${err.message}`);
      return 1;
    }
    if (err instanceof Error && err.message.includes("not supported")) {
      console.error(`error: ${err.message}`);
      return 1;
    }
    if ((err as NodeJS.ErrnoException)?.code === "ENOENT") {
      console.error(`error: ${(err as Error).message}`);
      return 1;
    }
    throw err;
  }
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("cli.js") || entry.endsWith("hatewatch-bridge")) {
  runCli(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
