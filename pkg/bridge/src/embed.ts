import {
  ChunkRecord,
  DocEmbedding,
  SchemaError,
  TopicEntry,
  docEmbeddingSchema,
  normalize,
  topicEntrySchema,
} from "./schema.js";
import { stubEmbed } from "./stub.js";

export type Embedder = (text: string) => number[];

/**
 * One embedding per chunk document, tagged with its channel so the pipeline
 * can aggregate hits per channel. Order is canonicalized the same way as
 * scores.
 */
export function embedDocuments(
  chunks: ChunkRecord[],
  embedder: Embedder = (text) => stubEmbed(text),
): DocEmbedding[] {
  const ordered = [...chunks].sort((a, b) =>
    a.channel_id !== b.channel_id
      ? a.channel_id < b.channel_id
        ? -1
        : 1
      : a.message_id !== b.message_id
        ? a.message_id - b.message_id
        : a.chunk_index - b.chunk_index
  );
  const out: DocEmbedding[] = [];
  let dim: number | null = null;
  for (const chunk of ordered) {
    const vector = embedder(chunk.text);
    if (dim === null) dim = vector.length;
    if (vector.length !== dim) {
      throw new SchemaError(
        `embedder returned dimension ${vector.length}, expected ${dim}`
      );
    }
    out.push(
      docEmbeddingSchema.parse({ channel_id: chunk.channel_id, vector })
    );
  }
  return out;
}

export type TopicArtifact = {
  topic_id: string;
  terms?: string[];
  vector: number[];
};

/**
 * Select topics from a trained-model artifact and emit them in the pipeline
 * format, unit-normalized. Exactly nine topics must be selected.
 */
export function exportTopics(
  artifact: TopicArtifact[],
  selectedIds: string[]
): TopicEntry[] {
  if (selectedIds.length !== 9) {
    throw new SchemaError(
      `expected 9 selected topics, got ${selectedIds.length}`
    );
  }
  const byId = new Map(artifact.map((t) => [t.topic_id, t]));
  const dims = new Set(artifact.map((t) => t.vector.length));
  if (dims.size > 1) {
    throw new SchemaError("topic artifact mixes vector dimensions");
  }
  return selectedIds.map((id) => {
    const entry = byId.get(id);
    if (!entry) {
      throw new SchemaError(`topic ${id} not present in the artifact`);
    }
    return topicEntrySchema.parse({
      topic_id: entry.topic_id,
      terms: entry.terms ?? [],
      vector: normalize(entry.vector),
    });
  });
}
