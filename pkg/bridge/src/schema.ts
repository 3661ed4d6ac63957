import { z } from "zod";

/**
 * Wire formats shared with the main pipeline. The bridge never invents its
 * own shapes: anything written here must be loadable by the pipeline's
 * `score-merge` and `topic-features` stages unchanged.
 */

export const chunkRecordSchema = z.object({
  channel_id: z.string().min(1),
  message_id: z.number().int(),
  chunk_index: z.number().int().nonnegative(),
  text: z.string(),
});

export const scoreRecordSchema = z.object({
  channel_id: z.string().min(1),
  message_id: z.number().int(),
  chunk_index: z.number().int().nonnegative(),
  classifier_id: z.string().min(1),
  p_abusive: z.number().min(0).max(1),
});

export const docEmbeddingSchema = z.object({
  channel_id: z.string().min(1),
  vector: z.array(z.number()).min(1),
});

export const topicEntrySchema = z.object({
  topic_id: z.string().min(1),
  terms: z.array(z.string()),
  vector: z.array(z.number()).min(1),
});

export type ChunkRecord = z.infer<typeof chunkRecordSchema>;
export type ScoreRecord = z.infer<typeof scoreRecordSchema>;
export type DocEmbedding = z.infer<typeof docEmbeddingSchema>;
export type TopicEntry = z.infer<typeof topicEntrySchema>;

/** The nine channel-feature topics, in canonical order. */
export const TOPIC_NAMES = [
  "Vaccinations",
  "Police",
  "Covid-19",
  "Migration",
  "Extremism",
  "Racism",
  "Islamophobia",
  "Violence",
  "Antisemitism",
] as const;

export class SchemaError extends Error {}

export function parseJsonl<T>(
  raw: string,
  schema: z.ZodType<T>,
  source: string
): T[] {
  const out: T[] = [];
  const lines = raw.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    let value: unknown;
    try {
      value = JSON.parse(line);
    } catch {
      throw new SchemaError(`${source}:${i + 1}: not valid JSON`);
    }
    const parsed = schema.safeParse(value);
    if (!parsed.success) {
      throw new SchemaError(
        `${source}:${i + 1}: ${parsed.error.issues[0].message}`
      );
    }
    out.push(parsed.data);
  }
  return out;
}

export function toJsonl(records: unknown[]): string {
  return records.map((r) => JSON.stringify(r)).join("\n") + (records.length ? "\n" : "");
}

export function norm(vector: number[]): number {
  return Math.sqrt(vector.reduce((acc, v) => acc + v * v, 0));
}

export function normalize(vector: number[]): number[] {
  const n = norm(vector);
  if (n === 0) {
    throw new SchemaError("cannot normalize a zero vector");
  }
  return vector.map((v) => v / n);
}
