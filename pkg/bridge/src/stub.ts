import { norm, normalize } from "./schema.js";

/**
 * Deterministic offline models. The stub scorer maps chunk length to a
 * probability and the stub embedder hashes the text into a unit vector, so
 * the whole bridge runs in CI without model downloads or credentials while
 * keeping every output schema-identical to the real thing.
 */

export const STUB_MAX_WORDS = 412;

export function wordCount(text: string): number {
  const trimmed = text.trim();
  return trimmed ? trimmed.split(/\s+/).length : 0;
}

/** Length-based score: longer chunks rate higher, capped at 1. */
export function stubScore(text: string): number {
  return Math.min(1, wordCount(text) / STUB_MAX_WORDS);
}

function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Text-seeded unit vector; identical texts always embed identically. */
export function stubEmbed(text: string, dim = 16): number[] {
  const rand = mulberry32(fnv1a(text));
  const raw: number[] = [];
  for (let i = 0; i < dim; i++) {
    raw.push(rand() * 2 - 1);
  }
  if (norm(raw) === 0) {
    raw[0] = 1; // astronomically unlikely, but keep the unit-norm contract
  }
  return normalize(raw);
}
