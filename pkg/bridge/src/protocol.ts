/**
 * Length-prefixed JSON framing: a 4-byte big-endian unsigned length
 * followed by a UTF-8 JSON object. Frames above 64 MiB are refused.
 */

export const MAX_MESSAGE_BYTES = 64 * 1024 * 1024;

export interface DecodeRequestWire {
  features: number[][];
  frame_ms: number;
  prefix_ids: number[];
  max_new: number;
}

export interface DecodeResponseWire {
  token_ids: number[];
  surfaces: string[];
  begins_word: boolean[];
  attention: number[][];
  compute_ms: number;
}

export interface ErrorResponseWire {
  error: { message: string };
}

export function encodeFrame(message: object): Buffer {
  const body = Buffer.from(JSON.stringify(message), 'utf8');
  if (body.length > MAX_MESSAGE_BYTES) {
    throw new Error(`frame of ${body.length} bytes exceeds the 64 MiB cap`);
  }
  const header = Buffer.alloc(4);
  header.writeUInt32BE(body.length, 0);
  return Buffer.concat([header, body]);
}

export type DecodedFrame =
  | { kind: 'message'; value: Record<string, unknown> }
  | { kind: 'garbage'; error: string };

/**
 * Incremental decoder for a byte stream of frames. Feed arbitrary chunk
 * boundaries; complete frames come out in order.
 *
 * A frame whose body is not a JSON object is reported as garbage but the
 * stream stays usable (the framing itself was intact). A length header
 * beyond the cap poisons the stream: there is no way to find the next
 * frame boundary, so the decoder refuses all further input.
 */
export class FrameDecoder {
  private buffer = Buffer.alloc(0);
  private dead: string | null = null;

  get poisoned(): string | null {
    return this.dead;
  }

  push(chunk: Buffer): DecodedFrame[] {
    if (this.dead !== null) {
      throw new Error(`stream is unrecoverable: ${this.dead}`);
    }
    this.buffer = Buffer.concat([this.buffer, chunk]);
    const out: DecodedFrame[] = [];
    for (;;) {
      if (this.buffer.length < 4) break;
      const length = this.buffer.readUInt32BE(0);
      if (length > MAX_MESSAGE_BYTES) {
        this.dead = `declared frame length ${length} exceeds the 64 MiB cap`;
        out.push({ kind: 'garbage', error: this.dead });
        return out;
      }
      if (this.buffer.length < 4 + length) break;
      const body = this.buffer.subarray(4, 4 + length);
      this.buffer = this.buffer.subarray(4 + length);
      out.push(parseBody(body));
    }
    return out;
  }
}

function parseBody(body: Buffer): DecodedFrame {
  let parsed: unknown;
  try {
    parsed = JSON.parse(body.toString('utf8'));
  } catch {
    return { kind: 'garbage', error: 'frame body is not valid JSON' };
  }
  if (typeof parsed !== 'object' || parsed === null || Array.isArray(parsed)) {
    return { kind: 'garbage', error: 'frame body is not a JSON object' };
  }
  return { kind: 'message', value: parsed as Record<string, unknown> };
}
