/**
 * Deterministic stand-in translation model.
 *
 * A small encoder-decoder with real softmax cross-attention: audio frames
 * are embedded (content + position), decoder states flow through several
 * layers of multi-head attention over them, and the next token is the
 * greedy argmax of a vocabulary projection. All weights come from a fixed
 * seeded generator, so identical requests always produce identical
 * responses - including the returned attention, which is the head-mean of
 * the last layer's softmax rows.
 */

import { DecodeRequestWire, DecodeResponseWire } from './protocol';

export const VOCAB_SIZE = 64;
export const EMBED = 16;
export const HEADS = 4;
export const HEAD_DIM = EMBED / HEADS;
export const LAYERS = 4;

const STOP_ID = VOCAB_SIZE - 1;
const BOS_ID = VOCAB_SIZE - 2;

export const MAX_FRAMES = 4096;
export const MAX_PREFIX = 1024;
export const MAX_NEW_CAP = 256;
const FEATURE_FOLD = 64; // feature columns wrap around this many weight rows

export class ModelInputError extends Error {}

// --- seeded weights ---

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function table(rng: () => number, rows: number, cols: number): Float64Array {
  const out = new Float64Array(rows * cols);
  for (let i = 0; i < out.length; i++) out[i] = rng() * 2 - 1;
  return out;
}

const rng = mulberry32(0x517ea11);
const tokEmb = table(rng, VOCAB_SIZE, EMBED);
const featW = table(rng, FEATURE_FOLD, EMBED);
const wq: Float64Array[][] = [];
const wk: Float64Array[][] = [];
const wv: Float64Array[][] = [];
const wmix: Float64Array[] = [];
for (let l = 0; l < LAYERS; l++) {
  wq.push([]); wk.push([]); wv.push([]);
  for (let h = 0; h < HEADS; h++) {
    wq[l].push(table(rng, EMBED, HEAD_DIM));
    wk[l].push(table(rng, EMBED, HEAD_DIM));
    wv[l].push(table(rng, EMBED, HEAD_DIM));
  }
  wmix.push(table(rng, EMBED, EMBED));
}
const wout = table(rng, VOCAB_SIZE, EMBED);

// --- deterministic vocabulary ---

const SYLLABLES = ['ka', 'ri', 'to', 'mu', 'se', 'la', 'do', 'vi',
                   'ne', 'ba', 'zu', 'fo', 'gi', 'pe', 'ta', 'lo'];

function buildVocab(): { surfaces: string[]; beginsWord: boolean[] } {
  const surfaces: string[] = [];
  const beginsWord: boolean[] = [];
  for (let id = 0; id < VOCAB_SIZE; id++) {
    let s = SYLLABLES[id % SYLLABLES.length];
    if (id % 5 === 0) s += SYLLABLES[(id * 3 + 1) % SYLLABLES.length];
    if (id % 11 === 6) s += '.';
    surfaces.push(s);
    beginsWord.push(id % 4 !== 3);
  }
  surfaces[STOP_ID] = '</s>';
  beginsWord[STOP_ID] = true;
  return { surfaces, beginsWord };
}

const vocab = buildVocab();

export function surfaceOf(id: number): string {
  return vocab.surfaces[id];
}

export function beginsWordOf(id: number): boolean {
  return vocab.beginsWord[id];
}

// --- request validation ---

function validate(request: Record<string, unknown>): DecodeRequestWire {
  const { features, frame_ms, prefix_ids, max_new } = request as
    Partial<DecodeRequestWire>;
  if (!Array.isArray(features) || features.length === 0) {
    throw new ModelInputError('features must be a non-empty array of frames');
  }
  if (features.length > MAX_FRAMES) {
    throw new ModelInputError(`more than ${MAX_FRAMES} frames`);
  }
  const width = Array.isArray(features[0]) ? features[0].length : -1;
  for (const row of features) {
    if (!Array.isArray(row) || row.length !== width ||
        row.some((x) => typeof x !== 'number' || !Number.isFinite(x))) {
      throw new ModelInputError(
        'features must be rectangular rows of finite numbers');
    }
  }
  if (typeof frame_ms !== 'number' || !Number.isFinite(frame_ms) ||
      frame_ms <= 0) {
    throw new ModelInputError('frame_ms must be a positive number');
  }
  if (!Array.isArray(prefix_ids) ||
      prefix_ids.some((x) => !Number.isInteger(x) || x < 0 ||
                             x >= VOCAB_SIZE)) {
    throw new ModelInputError(
      `prefix_ids must be integers in [0, ${VOCAB_SIZE})`);
  }
  if (prefix_ids.length > MAX_PREFIX) {
    throw new ModelInputError(`prefix longer than ${MAX_PREFIX} tokens`);
  }
  if (!Number.isInteger(max_new) || (max_new as number) < 1) {
    throw new ModelInputError('max_new must be a positive integer');
  }
  return { features, frame_ms, prefix_ids, max_new: max_new as number };
}

// --- the decoder ---

function embedFrames(features: number[][]): Float64Array[] {
  const out: Float64Array[] = [];
  for (let p = 0; p < features.length; p++) {
    const row = features[p];
    const emb = new Float64Array(EMBED);
    for (let d = 0; d < EMBED; d++) {
      let acc = positional(p, d);
      for (let k = 0; k < row.length; k++) {
        acc += row[k] * featW[(k % FEATURE_FOLD) * EMBED + d];
      }
      emb[d] = Math.tanh(acc);
    }
    out.push(emb);
  }
  return out;
}

function positional(pos: number, dim: number): number {
  const angle = pos / Math.pow(10000, Math.floor(dim / 2) * 2 / EMBED);
  return dim % 2 === 0 ? Math.sin(angle) : Math.cos(angle);
}

function project(vec: Float64Array, weights: Float64Array,
                 outDim: number): Float64Array {
  const out = new Float64Array(outDim);
  for (let i = 0; i < vec.length; i++) {
    const x = vec[i];
    if (x === 0) continue;
    for (let d = 0; d < outDim; d++) out[d] += x * weights[i * outDim + d];
  }
  return out;
}

function softmax(scores: Float64Array): Float64Array {
  let max = -Infinity;
  for (const s of scores) if (s > max) max = s;
  const out = new Float64Array(scores.length);
  let total = 0;
  for (let i = 0; i < scores.length; i++) {
    out[i] = Math.exp(scores[i] - max);
    total += out[i];
  }
  for (let i = 0; i < out.length; i++) out[i] /= total;
  return out;
}

interface StepOutput {
  state: Float64Array;
  lastLayerHeadMean: Float64Array; // one attention row over the frames
}

function decodeStep(prevId: number, position: number,
                    keys: Float64Array[][][], values: Float64Array[][][],
                    numFrames: number): StepOutput {
  let state = new Float64Array(EMBED);
  for (let d = 0; d < EMBED; d++) {
    state[d] = tokEmb[prevId * EMBED + d] + positional(position, d);
  }
  let headMean = new Float64Array(numFrames);
  for (let l = 0; l < LAYERS; l++) {
    const ctx = new Float64Array(EMBED);
    if (l === LAYERS - 1) headMean = new Float64Array(numFrames);
    for (let h = 0; h < HEADS; h++) {
      const q = project(state, wq[l][h], HEAD_DIM);
      const scores = new Float64Array(numFrames);
      for (let j = 0; j < numFrames; j++) {
        let dot = 0;
        const key = keys[l][h][j];
        for (let d = 0; d < HEAD_DIM; d++) dot += q[d] * key[d];
        scores[j] = dot / Math.sqrt(HEAD_DIM);
      }
      const attn = softmax(scores);
      if (l === LAYERS - 1) {
        for (let j = 0; j < numFrames; j++) headMean[j] += attn[j] / HEADS;
      }
      for (let j = 0; j < numFrames; j++) {
        const value = values[l][h][j];
        for (let d = 0; d < HEAD_DIM; d++) {
          ctx[h * HEAD_DIM + d] += attn[j] * value[d];
        }
      }
    }
    const mixed = project(ctx, wmix[l], EMBED);
    const next = new Float64Array(EMBED);
    for (let d = 0; d < EMBED; d++) next[d] = Math.tanh(state[d] + mixed[d]);
    state = next;
  }
  return { state, lastLayerHeadMean: headMean };
}

function greedyNext(state: Float64Array): number {
  let best = 0;
  let bestScore = -Infinity;
  for (let id = 0; id < VOCAB_SIZE; id++) {
    let score = 0;
    for (let d = 0; d < EMBED; d++) score += state[d] * wout[id * EMBED + d];
    if (score > bestScore) {
      bestScore = score;
      best = id;
    }
  }
  return best;
}

export function runDecode(raw: Record<string, unknown>): DecodeResponseWire {
  const request = validate(raw);
  const numFrames = request.features.length;
  const frameEmb = embedFrames(request.features);

  const keys: Float64Array[][][] = [];
  const values: Float64Array[][][] = [];
  for (let l = 0; l < LAYERS; l++) {
    keys.push([]); values.push([]);
    for (let h = 0; h < HEADS; h++) {
      keys[l].push(frameEmb.map((e) => project(e, wk[l][h], HEAD_DIM)));
      values[l].push(frameEmb.map((e) => project(e, wv[l][h], HEAD_DIM)));
    }
  }

  const ids: number[] = [];
  const attention: number[][] = [];
  const maxNew = Math.min(request.max_new, MAX_NEW_CAP);
  let produced = 0;
  let prevId = BOS_ID;
  for (let position = 0; ; position++) {
    const forced = position < request.prefix_ids.length;
    if (!forced && produced >= maxNew) break;
    const step = decodeStep(prevId, position, keys, values, numFrames);
    const id = forced ? request.prefix_ids[position] : greedyNext(step.state);
    if (!forced && id === STOP_ID) break;
    ids.push(id);
    attention.push(Array.from(step.lastLayerHeadMean));
    if (!forced) produced++;
    prevId = id;
  }

  const computeMs = Math.round(
    (ids.length * numFrames * LAYERS * HEADS) / 2000 * 1000) / 1000;
  return {
    token_ids: ids,
    surfaces: ids.map(surfaceOf),
    begins_word: ids.map(beginsWordOf),
    attention,
    compute_ms: computeMs,
  };
}
