import axios, { AxiosInstance } from "axios";

/**
 * Remote scoring client: bounded concurrency, exponential backoff with
 * jitter on 429/5xx, and a permanent-failure list instead of a crashed run.
 */

export type RemoteSpec = {
  classifierId: string;
  endpoint: string;
  /** Name of the environment variable holding the API key. */
  credentialEnv: string;
  batchSize?: number;
  maxRetries?: number;
  concurrency?: number;
  /** Base backoff in ms; doubled per attempt, capped at 30 s. */
  backoffMs?: number;
};

export type ScoreRequest = { id: string; text: string };
export type ScoreFailure = { id: string; error: string };

export class CredentialError extends Error {}

export function resolveCredential(spec: RemoteSpec, env = process.env): string {
  const value = env[spec.credentialEnv];
  if (!value) {
    throw new CredentialError(
      `environment variable ${spec.credentialEnv} is not set (required by remote scorer ${spec.classifierId})`
    );
  }
  return value;
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

function retryable(err: unknown): boolean {
  if (axios.isAxiosError(err)) {
    const status = err.response?.status;
    return status === undefined || status === 429 || status >= 500;
  }
  return false;
}

export async function withBackoff<T>(
  fn: () => Promise<T>,
  maxRetries: number,
  backoffMs: number,
  sleeper: (ms: number) => Promise<unknown> = sleep
): Promise<T> {
  let attempt = 0;
  let wait = backoffMs;
  for (;;) {
    try {
      return await fn();
    } catch (err) {
      if (!retryable(err) || attempt >= maxRetries) throw err;
      attempt++;
      await sleeper(wait + Math.random() * 0.25 * wait);
      wait = Math.min(wait * 2, 30_000);
    }
  }
}

export async function mapBounded<T, R>(
  items: T[],
  limit: number,
  fn: (item: T) => Promise<R>
): Promise<R[]> {
  const results: R[] = new Array(items.length);
  let next = 0;
  const workers = Array.from({ length: Math.max(1, limit) }, async () => {
    for (;;) {
      const i = next++;
      if (i >= items.length) return;
      results[i] = await fn(items[i]);
    }
  });
  await Promise.all(workers);
  return results;
}

export type RemoteScoreResult = {
  scores: Map<string, number>;
  failures: ScoreFailure[];
};

/**
 * Score texts against a toxicity-style endpoint returning
 * `{ scores: number[] }` for a `{ texts: string[] }` POST body. A custom
 * axios instance can be injected for testing.
 */
export async function scoreRemote(
  requests: ScoreRequest[],
  spec: RemoteSpec,
  client: AxiosInstance = axios,
  sleeper?: (ms: number) => Promise<unknown>
): Promise<RemoteScoreResult> {
  const key = resolveCredential(spec);
  const batchSize = spec.batchSize ?? 16;
  const batches: ScoreRequest[][] = [];
  for (let i = 0; i < requests.length; i += batchSize) {
    batches.push(requests.slice(i, i + batchSize));
  }
  const scores = new Map<string, number>();
  const failures: ScoreFailure[] = [];
  await mapBounded(batches, spec.concurrency ?? 4, async (batch) => {
    try {
      const response = await withBackoff(
        () =>
          client.post(
            spec.endpoint,
            { texts: batch.map((r) => r.text) },
            { headers: { Authorization: `Bearer ${key}` } }
          ),
        spec.maxRetries ?? 5,
        spec.backoffMs ?? 1000,
        sleeper
      );
      const values: unknown = response.data?.scores;
      if (
        !Array.isArray(values) ||
        values.length !== batch.length ||
        values.some((v) => typeof v !== "number" || v < 0 || v > 1)
      ) {
        throw new Error("endpoint returned a malformed scores array");
      }
      batch.forEach((r, i) => scores.set(r.id, values[i] as number));
    } catch (err) {
      const message = err instanceof Error ? err.message : String(err);
      for (const r of batch) {
        failures.push({ id: r.id, error: message });
      }
    }
  });
  return { scores, failures };
}
