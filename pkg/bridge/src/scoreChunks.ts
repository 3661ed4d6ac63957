import { AxiosInstance } from "axios";

import {
  ChunkRecord,
  ScoreRecord,
  SchemaError,
  chunkRecordSchema,
  parseJsonl,
  scoreRecordSchema,
} from "./schema.js";
import { RemoteSpec, ScoreFailure, scoreRemote } from "./remote.js";
import { stubScore } from "./stub.js";

export type ScorerSpec =
  | { kind: "stub"; classifierId: string }
  | ({ kind: "remote-api" } & RemoteSpec)
  | { kind: "local-checkpoint"; classifierId: string; modelRef: string };

export type ScoreChunksResult = {
  records: ScoreRecord[];
  failures: ScoreFailure[];
};

export function loadChunks(raw: string, source: string): ChunkRecord[] {
  return parseJsonl(raw, chunkRecordSchema, source);
}

const chunkId = (c: ChunkRecord) =>
  `${c.channel_id}:${c.message_id}:${c.chunk_index}`;

/**
 * Score every chunk with one classifier. Chunks are emitted in a canonical
 * (channel, message, chunk) order, so shuffled input produces the same file.
 */
export async function scoreChunks(
  chunks: ChunkRecord[],
  spec: ScorerSpec,
  client?: AxiosInstance,
  sleeper?: (ms: number) => Promise<unknown>
): Promise<ScoreChunksResult> {
  const seen = new Set<string>();
  for (const chunk of chunks) {
    const id = chunkId(chunk);
    if (seen.has(id)) {
      throw new SchemaError(`duplicate chunk ${id}`);
    }
    seen.add(id);
  }
  const ordered = [...chunks].sort((a, b) =>
    a.channel_id !== b.channel_id
      ? a.channel_id < b.channel_id
        ? -1
        : 1
      : a.message_id !== b.message_id
        ? a.message_id - b.message_id
        : a.chunk_index - b.chunk_index
  );

  let scores: Map<string, number>;
  let failures: ScoreFailure[] = [];
  if (spec.kind === "stub") {
    scores = new Map(ordered.map((c) => [chunkId(c), stubScore(c.text)]));
  } else if (spec.kind === "remote-api") {
    const result = await scoreRemote(
      ordered.map((c) => ({ id: chunkId(c), text: c.text })),
      spec,
      client,
      sleeper
    );
    scores = result.scores;
    failures = result.failures;
  } else {
    // Running local transformer checkpoints needs a model runtime this
    // adapter deliberately does not ship; fail loudly instead of guessing.
    throw new Error(
      `local-checkpoint scoring is not supported by this build (classifier ${spec.classifierId}); use kind "remote-api" or "stub"`
    );
  }

  const classifierId = spec.classifierId;
  const records: ScoreRecord[] = [];
  for (const chunk of ordered) {
    const p = scores.get(chunkId(chunk));
    if (p === undefined) continue; // permanently failed; listed in sidecar
    records.push(
      scoreRecordSchema.parse({
        channel_id: chunk.channel_id,
        message_id: chunk.message_id,
        chunk_index: chunk.chunk_index,
        classifier_id: classifierId,
        p_abusive: p,
      })
    );
  }
  return { records, failures };
}
