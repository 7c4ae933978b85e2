/**
 * Binary wire codec for the window-stream service.
 *
 * Every frame is a 10-byte header (magic "SWIN", version, type, payload
 * length) followed by a little-endian packed payload.  All multi-byte
 * integers and floats are little-endian at unaligned offsets, so the
 * codec works through DataView rather than typed-array views.
 *
 * Cell payloads inside WindowResponse frames arrive raw-deflate
 * compressed; `inflateRaw` undoes that with the streaming API that both
 * browsers and node expose.
 */

export const MAGIC = [0x53, 0x57, 0x49, 0x4e]; // "SWIN"
export const VERSION = 1;
export const HEADER_BYTES = 10;
export const MAX_FRAME_BYTES = 2 ** 31;

export const T_WINDOW_REQUEST = 1;
export const T_WINDOW_RESPONSE = 2;
export const T_STEERING = 3;
export const T_ACK = 4;
export const T_STATUS = 5;

export const K_SET_INFLOW = 1;
export const K_SET_VISCOSITY = 2;
export const K_REFINE_REGION = 3;
export const K_PAUSE = 4;
export const K_RESUME = 5;

// field selector bits in canonical stream order
export const F_UX = 0x01;
export const F_UY = 0x02;
export const F_UZ = 0x04;
export const F_P = 0x08;
export const F_UMAG = 0x10;
export const F_FLAGS = 0x20;
export const ALL_FIELDS = 0x3f;
export const FIELD_ORDER: readonly [number, string][] = [
  [F_UX, "ux"],
  [F_UY, "uy"],
  [F_UZ, "uz"],
  [F_P, "p"],
  [F_UMAG, "umag"],
  [F_FLAGS, "flags"],
];

/** Bytes per cell for a field selection: 4 per float field, 1 for flags. */
export function bytesPerCell(mask: number): number {
  if (mask === 0 || (mask & ~ALL_FIELDS) !== 0) {
    throw new ProtocolError(`bad field mask 0x${mask.toString(16)}`);
  }
  let total = 0;
  for (const [bit] of FIELD_ORDER) {
    if (mask & bit) total += bit === F_FLAGS ? 1 : 4;
  }
  return total;
}

export type Vec3 = [number, number, number];
export type Box = [number, number, number, number, number, number];

export interface WindowRequest {
  session: number;
  request: number;
  box: Box;
  fields: number;
  maxBytes: number;
}

export interface BlockRecord {
  uid: number;
  start: Vec3;
  count: Vec3;
}

export interface WindowResponse {
  request: number;
  step: number;
  depth: number;
  stride: Vec3;
  fields: number;
  blocks: BlockRecord[];
  cellCount: number;
  rawSize: number;
  /** Raw-deflate compressed cell payload. */
  data: Uint8Array;
}

export interface Steering {
  request: number;
  kind: number;
  params: number[];
}

export interface Ack {
  request: number;
  ok: boolean;
  step: number;
  message: string;
}

export interface Status {
  session: number;
  step: number;
  time: number;
  paused: boolean;
  domain: Box;
  maxDepth: number;
  /** (depth, block count) pairs for every populated level. */
  levels: [number, number][];
  /** (x, y, z, radius) of every solid sphere in the specimen. */
  spheres: [number, number, number, number][];
}

export type Frame =
  | { type: typeof T_WINDOW_REQUEST; msg: WindowRequest }
  | { type: typeof T_WINDOW_RESPONSE; msg: WindowResponse }
  | { type: typeof T_STEERING; msg: Steering }
  | { type: typeof T_ACK; msg: Ack }
  | { type: typeof T_STATUS; msg: Status };

export class ProtocolError extends Error {}

const STEER_PARAM_COUNT: Record<number, number> = {
  [K_SET_INFLOW]: 3,
  [K_SET_VISCOSITY]: 1,
  [K_REFINE_REGION]: 6,
  [K_PAUSE]: 0,
  [K_RESUME]: 0,
};

// ---- low-level helpers ---------------------------------------------------

function readU64(dv: DataView, off: number): number {
  const v = dv.getBigUint64(off, true);
  if (v > BigInt(Number.MAX_SAFE_INTEGER)) {
    throw new ProtocolError(`u64 value ${v} exceeds safe integer range`);
  }
  return Number(v);
}

function writeU64(dv: DataView, off: number, value: number): void {
  if (!Number.isSafeInteger(value) || value < 0) {
    throw new ProtocolError(`cannot encode ${value} as u64`);
  }
  dv.setBigUint64(off, BigInt(value), true);
}

function need(payload: Uint8Array, size: number, what: string): void {
  if (payload.byteLength < size) {
    throw new ProtocolError(`${what} payload too short: ${payload.byteLength} < ${size}`);
  }
}

function frame(type: number, payload: Uint8Array): Uint8Array {
  const out = new Uint8Array(HEADER_BYTES + payload.byteLength);
  const dv = new DataView(out.buffer);
  out.set(MAGIC, 0);
  dv.setUint8(4, VERSION);
  dv.setUint8(5, type);
  dv.setUint32(6, payload.byteLength, true);
  out.set(payload, HEADER_BYTES);
  return out;
}

function view(payload: Uint8Array): DataView {
  return new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
}

// ---- encoders ------------------------------------------------------------

export function encodeWindowRequest(m: WindowRequest): Uint8Array {
  const payload = new Uint8Array(65);
  const dv = view(payload);
  dv.setUint32(0, m.session, true);
  dv.setUint32(4, m.request, true);
  for (let i = 0; i < 6; i++) dv.setFloat64(8 + 8 * i, m.box[i], true);
  dv.setUint8(56, m.fields);
  writeU64(dv, 57, m.maxBytes);
  return frame(T_WINDOW_REQUEST, payload);
}

export function encodeWindowResponse(m: WindowResponse): Uint8Array {
  const payload = new Uint8Array(40 + 32 * m.blocks.length + m.data.byteLength);
  const dv = view(payload);
  dv.setUint32(0, m.request, true);
  writeU64(dv, 4, m.step);
  dv.setUint8(12, m.depth);
  for (let i = 0; i < 3; i++) dv.setUint16(13 + 2 * i, m.stride[i], true);
  dv.setUint8(19, m.fields);
  dv.setUint32(20, m.blocks.length, true);
  writeU64(dv, 24, m.cellCount);
  writeU64(dv, 32, m.rawSize);
  let off = 40;
  for (const b of m.blocks) {
    writeU64(dv, off, b.uid);
    for (let i = 0; i < 3; i++) dv.setUint32(off + 8 + 4 * i, b.start[i], true);
    for (let i = 0; i < 3; i++) dv.setUint32(off + 20 + 4 * i, b.count[i], true);
    off += 32;
  }
  payload.set(m.data, off);
  return frame(T_WINDOW_RESPONSE, payload);
}

export function encodeSteering(m: Steering): Uint8Array {
  const count = STEER_PARAM_COUNT[m.kind];
  if (count === undefined) throw new ProtocolError(`unknown steering kind ${m.kind}`);
  if (m.params.length !== count) {
    throw new ProtocolError(`steering kind ${m.kind} takes ${count} params, got ${m.params.length}`);
  }
  const payload = new Uint8Array(5 + 8 * count);
  const dv = view(payload);
  dv.setUint32(0, m.request, true);
  dv.setUint8(4, m.kind);
  for (let i = 0; i < count; i++) dv.setFloat64(5 + 8 * i, m.params[i], true);
  return frame(T_STEERING, payload);
}

export function encodeAck(m: Ack): Uint8Array {
  const text = new TextEncoder().encode(m.message);
  const payload = new Uint8Array(13 + text.byteLength);
  const dv = view(payload);
  dv.setUint32(0, m.request, true);
  dv.setUint8(4, m.ok ? 1 : 0);
  writeU64(dv, 5, m.step);
  payload.set(text, 13);
  return frame(T_ACK, payload);
}

export function encodeStatus(m: Status): Uint8Array {
  const payload = new Uint8Array(71 + 5 * m.levels.length + 4 + 32 * m.spheres.length);
  const dv = view(payload);
  dv.setUint32(0, m.session, true);
  writeU64(dv, 4, m.step);
  dv.setFloat64(12, m.time, true);
  dv.setUint8(20, m.paused ? 1 : 0);
  for (let i = 0; i < 6; i++) dv.setFloat64(21 + 8 * i, m.domain[i], true);
  dv.setUint8(69, m.maxDepth);
  dv.setUint8(70, m.levels.length);
  let off = 71;
  for (const [depth, blocks] of m.levels) {
    dv.setUint8(off, depth);
    dv.setUint32(off + 1, blocks, true);
    off += 5;
  }
  dv.setUint32(off, m.spheres.length, true);
  off += 4;
  for (const s of m.spheres) {
    for (let i = 0; i < 4; i++) dv.setFloat64(off + 8 * i, s[i], true);
    off += 32;
  }
  return frame(T_STATUS, payload);
}

// ---- decoders ------------------------------------------------------------

export function decodeWindowRequest(payload: Uint8Array): WindowRequest {
  need(payload, 65, "WindowRequest");
  const dv = view(payload);
  const box = new Array<number>(6);
  for (let i = 0; i < 6; i++) box[i] = dv.getFloat64(8 + 8 * i, true);
  return {
    session: dv.getUint32(0, true),
    request: dv.getUint32(4, true),
    box: box as Box,
    fields: dv.getUint8(56),
    maxBytes: readU64(dv, 57),
  };
}

export function decodeWindowResponse(payload: Uint8Array): WindowResponse {
  need(payload, 40, "WindowResponse");
  const dv = view(payload);
  const nBlocks = dv.getUint32(20, true);
  need(payload, 40 + 32 * nBlocks, "WindowResponse records");
  const blocks: BlockRecord[] = new Array(nBlocks);
  let off = 40;
  for (let b = 0; b < nBlocks; b++) {
    blocks[b] = {
      uid: readU64(dv, off),
      start: [
        dv.getUint32(off + 8, true),
        dv.getUint32(off + 12, true),
        dv.getUint32(off + 16, true),
      ],
      count: [
        dv.getUint32(off + 20, true),
        dv.getUint32(off + 24, true),
        dv.getUint32(off + 28, true),
      ],
    };
    off += 32;
  }
  return {
    request: dv.getUint32(0, true),
    step: readU64(dv, 4),
    depth: dv.getUint8(12),
    stride: [
      dv.getUint16(13, true),
      dv.getUint16(15, true),
      dv.getUint16(17, true),
    ],
    fields: dv.getUint8(19),
    blocks,
    cellCount: readU64(dv, 24),
    rawSize: readU64(dv, 32),
    data: payload.slice(off),
  };
}

export function decodeSteering(payload: Uint8Array): Steering {
  need(payload, 5, "Steering");
  const dv = view(payload);
  const kind = dv.getUint8(4);
  const count = STEER_PARAM_COUNT[kind];
  if (count === undefined) throw new ProtocolError(`unknown steering kind ${kind}`);
  if (payload.byteLength !== 5 + 8 * count) {
    throw new ProtocolError(`steering kind ${kind} expects ${8 * count} parameter bytes`);
  }
  const params = new Array<number>(count);
  for (let i = 0; i < count; i++) params[i] = dv.getFloat64(5 + 8 * i, true);
  return { request: dv.getUint32(0, true), kind, params };
}

export function decodeAck(payload: Uint8Array): Ack {
  need(payload, 13, "Ack");
  const dv = view(payload);
  return {
    request: dv.getUint32(0, true),
    ok: dv.getUint8(4) !== 0,
    step: readU64(dv, 5),
    message: new TextDecoder().decode(payload.subarray(13)),
  };
}

export function decodeStatus(payload: Uint8Array): Status {
  need(payload, 71, "Status");
  const dv = view(payload);
  const domain = new Array<number>(6);
  for (let i = 0; i < 6; i++) domain[i] = dv.getFloat64(21 + 8 * i, true);
  const nLevels = dv.getUint8(70);
  need(payload, 71 + 5 * nLevels + 4, "Status levels");
  const levels: [number, number][] = new Array(nLevels);
  let off = 71;
  for (let i = 0; i < nLevels; i++) {
    levels[i] = [dv.getUint8(off), dv.getUint32(off + 1, true)];
    off += 5;
  }
  const nSpheres = dv.getUint32(off, true);
  off += 4;
  need(payload, off + 32 * nSpheres, "Status spheres");
  const spheres: [number, number, number, number][] = new Array(nSpheres);
  for (let i = 0; i < nSpheres; i++) {
    spheres[i] = [
      dv.getFloat64(off, true),
      dv.getFloat64(off + 8, true),
      dv.getFloat64(off + 16, true),
      dv.getFloat64(off + 24, true),
    ];
    off += 32;
  }
  return {
    session: dv.getUint32(0, true),
    step: readU64(dv, 4),
    time: dv.getFloat64(12, true),
    paused: dv.getUint8(20) !== 0,
    domain: domain as Box,
    maxDepth: dv.getUint8(69),
    levels,
    spheres,
  };
}

export function decodePayload(type: number, payload: Uint8Array): Frame {
  switch (type) {
    case T_WINDOW_REQUEST:
      return { type, msg: decodeWindowRequest(payload) };
    case T_WINDOW_RESPONSE:
      return { type, msg: decodeWindowResponse(payload) };
    case T_STEERING:
      return { type, msg: decodeSteering(payload) };
    case T_ACK:
      return { type, msg: decodeAck(payload) };
    case T_STATUS:
      return { type, msg: decodeStatus(payload) };
    default:
      throw new ProtocolError(`unknown frame type ${type}`);
  }
}

/**
 * Incremental frame reassembly for a byte stream.
 *
 * WebSocket delivery preserves message boundaries, but the splitter
 * still tolerates several frames per chunk or one frame across chunks,
 * so the same client runs over any framed transport.
 */
export class FrameSplitter {
  private chunks: Uint8Array[] = [];
  private size = 0;

  feed(chunk: Uint8Array): Frame[] {
    this.chunks.push(chunk);
    this.size += chunk.byteLength;
    const frames: Frame[] = [];
    for (;;) {
      if (this.size < HEADER_BYTES) break;
      const head = this.peek(HEADER_BYTES);
      for (let i = 0; i < 4; i++) {
        if (head[i] !== MAGIC[i]) throw new ProtocolError("bad frame magic");
      }
      if (head[4] !== VERSION) throw new ProtocolError(`unsupported version ${head[4]}`);
      const dv = new DataView(head.buffer, head.byteOffset);
      const payloadLen = dv.getUint32(6, true);
      if (payloadLen > MAX_FRAME_BYTES) throw new ProtocolError("frame too large");
      if (this.size < HEADER_BYTES + payloadLen) break;
      const whole = this.take(HEADER_BYTES + payloadLen);
      frames.push(decodePayload(whole[5], whole.subarray(HEADER_BYTES)));
    }
    return frames;
  }

  private peek(n: number): Uint8Array {
    if (this.chunks[0].byteLength >= n) return this.chunks[0];
    this.chunks = [concat(this.chunks, this.size)];
    return this.chunks[0];
  }

  private take(n: number): Uint8Array {
    let buf = this.chunks[0];
    if (buf.byteLength < n) {
      buf = concat(this.chunks, this.size);
      this.chunks = [buf];
    }
    const out = buf.subarray(0, n);
    const rest = buf.subarray(n);
    this.chunks = rest.byteLength > 0 ? [rest] : [];
    this.size -= n;
    return out;
  }
}

function concat(chunks: Uint8Array[], total: number): Uint8Array {
  const out = new Uint8Array(total);
  let off = 0;
  for (const c of chunks) {
    out.set(c, off);
    off += c.byteLength;
  }
  return out;
}

/** Decompress a raw-deflate stream (no zlib or gzip container). */
export async function inflateRaw(data: Uint8Array): Promise<Uint8Array> {
  const ds = new DecompressionStream("deflate-raw");
  const writer = ds.writable.getWriter();
  void writer.write(data.slice());
  void writer.close();
  const parts: Uint8Array[] = [];
  let total = 0;
  const reader = ds.readable.getReader();
  for (;;) {
    const { done, value } = await reader.read();
    if (done) break;
    parts.push(value);
    total += value.byteLength;
  }
  return concat(parts, total);
}
