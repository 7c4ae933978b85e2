/**
 * Session client for the window-stream service over WebSocket.
 *
 * Discipline enforced here, independent of any UI:
 *  - one window request in flight at a time; a newer gesture replaces
 *    any queued one, so stale intermediate views are never fetched;
 *  - responses are correlated and de-duplicated by request id, so a
 *    repeated delivery cannot trigger a second render;
 *  - steering commands resolve with the server's acknowledgement,
 *    successful or not, so the UI can show the reason verbatim.
 *
 * The greeting status frame carries the session id, domain bounds and
 * specimen geometry; `connect` resolves once it arrives.
 */

import {
  Ack,
  Frame,
  FrameSplitter,
  Status,
  T_ACK,
  T_STATUS,
  T_WINDOW_RESPONSE,
  WindowRequest,
  WindowResponse,
  encodeSteering,
  encodeWindowRequest,
  inflateRaw,
} from "./protocol.js";

/** Minimal WebSocket surface; both browsers and the `ws` package fit. */
export interface WebSocketLike {
  binaryType: string;
  send(data: Uint8Array): void;
  close(): void;
  addEventListener(type: "open", fn: () => void): void;
  addEventListener(type: "message", fn: (ev: { data: unknown }) => void): void;
  addEventListener(type: "close", fn: () => void): void;
  addEventListener(type: "error", fn: (ev: unknown) => void): void;
}

export type SocketFactory = (url: string) => WebSocketLike;

export interface WindowResult {
  resp: WindowResponse;
  /** Decompressed cell payload, `resp.rawSize` bytes. */
  payload: Uint8Array;
}

export interface ClientEvents {
  onStatus?(status: Status): void;
  onWindow?(result: WindowResult): void;
  /** Every acknowledgement, including unsolicited protocol errors. */
  onAck?(ack: Ack): void;
  onClose?(): void;
}

/** The request was replaced by a newer gesture before being sent. */
export class SupersededError extends Error {
  constructor() {
    super("superseded by a newer window request");
  }
}

/** The server refused the request; `message` is its reason. */
export class RejectedError extends Error {
  constructor(public ack: Ack) {
    super(ack.message || "request rejected");
  }
}

export class ConnectionClosedError extends Error {
  constructor() {
    super("connection closed");
  }
}

interface PendingWindow {
  id: number;
  req: WindowRequest;
  resolve(r: WindowResult): void;
  reject(e: Error): void;
}

interface PendingSteer {
  resolve(a: Ack): void;
  reject(e: Error): void;
}

const SEEN_LIMIT = 64;

function defaultFactory(url: string): WebSocketLike {
  return new WebSocket(url) as unknown as WebSocketLike;
}

export class SwinClient {
  private sock: WebSocketLike | null = null;
  private splitter = new FrameSplitter();
  private nextId = 1;
  private inFlight: PendingWindow | null = null;
  private queued: PendingWindow | null = null;
  private steers = new Map<number, PendingSteer>();
  private seen: number[] = [];
  private greeting: { resolve(s: Status): void; reject(e: Error): void } | null = null;
  private pipeline: Promise<void> = Promise.resolve();
  private closed = false;

  session = 0;
  lastStatus: Status | null = null;

  constructor(
    private url: string,
    private events: ClientEvents = {},
    private factory: SocketFactory = defaultFactory,
  ) {}

  /** Open the socket and resolve with the greeting status. */
  connect(): Promise<Status> {
    if (this.sock) throw new Error("connect() called twice");
    const sock = this.factory(this.url);
    this.sock = sock;
    sock.binaryType = "arraybuffer";
    const ready = new Promise<Status>((resolve, reject) => {
      this.greeting = { resolve, reject };
    });
    sock.addEventListener("message", (ev) => this.onData(ev.data));
    sock.addEventListener("close", () => this.teardown());
    sock.addEventListener("error", () => this.teardown());
    return ready;
  }

  /**
   * Ask for a window.  If one request is already on the wire the call
   * is queued; a later call replaces the queued one, whose promise
   * rejects with SupersededError.
   */
  requestWindow(req: Omit<WindowRequest, "session" | "request">): Promise<WindowResult> {
    if (this.closed) return Promise.reject(new ConnectionClosedError());
    const id = this.nextId++;
    return new Promise<WindowResult>((resolve, reject) => {
      const entry: PendingWindow = {
        id,
        req: { ...req, session: this.session, request: id },
        resolve,
        reject,
      };
      if (this.inFlight) {
        this.queued?.reject(new SupersededError());
        this.queued = entry;
      } else {
        this.dispatch(entry);
      }
    });
  }

  /** Send a steering command; resolves with the acknowledgement. */
  steer(kind: number, params: number[]): Promise<Ack> {
    if (this.closed || !this.sock) return Promise.reject(new ConnectionClosedError());
    const id = this.nextId++;
    return new Promise<Ack>((resolve, reject) => {
      this.steers.set(id, { resolve, reject });
      this.sock!.send(encodeSteering({ request: id, kind, params }));
    });
  }

  close(): void {
    this.sock?.close();
    this.teardown();
  }

  // ---- internals ---------------------------------------------------------

  private dispatch(entry: PendingWindow): void {
    this.inFlight = entry;
    this.sock!.send(encodeWindowRequest(entry.req));
  }

  private onData(data: unknown): void {
    let bytes: Uint8Array;
    if (data instanceof ArrayBuffer) bytes = new Uint8Array(data);
    else if (ArrayBuffer.isView(data)) {
      bytes = new Uint8Array(data.buffer, data.byteOffset, data.byteLength);
    } else return;
    let frames: Frame[];
    try {
      frames = this.splitter.feed(bytes);
    } catch {
      this.teardown();
      return;
    }
    // frame effects run in order even though payload inflation is async
    for (const f of frames) {
      this.pipeline = this.pipeline.then(() => this.handle(f)).catch(() => {});
    }
  }

  private async handle(frame: Frame): Promise<void> {
    if (frame.type === T_STATUS) {
      this.lastStatus = frame.msg;
      if (this.greeting) {
        this.session = frame.msg.session;
        this.greeting.resolve(frame.msg);
        this.greeting = null;
      }
      this.events.onStatus?.(frame.msg);
    } else if (frame.type === T_WINDOW_RESPONSE) {
      await this.handleWindow(frame.msg);
    } else if (frame.type === T_ACK) {
      this.handleAck(frame.msg);
    }
    // requests and steering frames only flow towards the server
  }

  private async handleWindow(resp: WindowResponse): Promise<void> {
    if (this.seen.includes(resp.request)) return; // duplicate delivery
    this.remember(resp.request);
    const current = this.inFlight;
    if (!current || current.id !== resp.request) return; // stale or unknown
    let payload: Uint8Array;
    try {
      payload = await inflateRaw(resp.data);
      if (payload.byteLength !== resp.rawSize) {
        throw new Error(
          `payload size mismatch: ${payload.byteLength} != ${resp.rawSize}`,
        );
      }
    } catch (err) {
      this.finish(current, null, err as Error);
      return;
    }
    this.finish(current, { resp, payload }, null);
  }

  private handleAck(ack: Ack): void {
    const steer = this.steers.get(ack.request);
    if (steer) {
      this.steers.delete(ack.request);
      steer.resolve(ack);
    } else if (this.inFlight && this.inFlight.id === ack.request) {
      this.remember(ack.request);
      this.finish(this.inFlight, null, new RejectedError(ack));
    }
    this.events.onAck?.(ack);
  }

  private finish(entry: PendingWindow, result: WindowResult | null, err: Error | null): void {
    if (this.inFlight === entry) this.inFlight = null;
    if (result) {
      entry.resolve(result);
      this.events.onWindow?.(result);
    } else {
      entry.reject(err!);
    }
    if (this.queued && !this.inFlight) {
      const next = this.queued;
      this.queued = null;
      next.req.session = this.session;
      this.dispatch(next);
    }
  }

  private remember(id: number): void {
    this.seen.push(id);
    if (this.seen.length > SEEN_LIMIT) this.seen.shift();
  }

  private teardown(): void {
    if (this.closed) return;
    this.closed = true;
    const err = new ConnectionClosedError();
    this.greeting?.reject(err);
    this.greeting = null;
    this.inFlight?.reject(err);
    this.inFlight = null;
    this.queued?.reject(err);
    this.queued = null;
    for (const s of this.steers.values()) s.reject(err);
    this.steers.clear();
    this.events.onClose?.();
  }
}
