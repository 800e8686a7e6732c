// Connection lifecycle and live state for one operator console.
//
// The session keeps only the latest state frame (frames are coalesced on
// the render side), a rolling metrics store fed by episode_end messages,
// and the intervened-tick timeline of the current episode.  On any
// reconnect the override starts released: a dropped console must never
// resume control of the rig by itself.

import {
  checkProtocol,
  makeHello,
  makeInput,
  parseRuntimeMessage,
  type ControlMessage,
  type RuntimeMessage,
  type StateFrame,
} from './protocol.js';
import { MetricsStore } from './metrics.js';

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: ((err: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export type SessionState = 'connecting' | 'connected' | 'closed' | 'refused';

export interface TimelineSpan {
  start: number;  // tick, inclusive
  end: number;    // tick, inclusive
}

export interface StopLabel {
  tick: number;       // latest runtime tick when the label was sent
  episode: number;
  primitive: string;
}

export class ConsoleSession {
  readonly url: string;
  readonly metrics = new MetricsStore();
  state: SessionState = 'connecting';
  hasAuthority = false;
  latestFrame: StateFrame | null = null;
  overrideActive = false;
  readonly stopLabels: StopLabel[] = [];
  lastError = '';
  reconnectDelayMs = 2000;
  framesSeen = 0;
  private socket: SocketLike | null = null;
  private readonly factory: SocketFactory;
  private episodeTicks: { tick: number; intervened: boolean }[] = [];
  private currentEpisode = -1;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private closedByUser = false;
  onframe: ((f: StateFrame) => void) | null = null;
  onepisode: (() => void) | null = null;

  constructor(url: string, factory?: SocketFactory) {
    this.url = url;
    this.factory =
      factory ??
      ((u: string) => new WebSocket(u) as unknown as SocketLike);
    this.connect();
  }

  private connect(): void {
    this.state = 'connecting';
    // safety default: every (re)connect starts with the override released
    this.overrideActive = false;
    const sock = this.factory(this.url);
    this.socket = sock;
    sock.onopen = () => {
      sock.send(JSON.stringify(makeHello()));
    };
    sock.onmessage = (ev) => this.handleMessage(String(ev.data));
    sock.onclose = () => this.handleClose();
    sock.onerror = () => {
      this.lastError = 'connection error';
    };
  }

  private handleClose(): void {
    this.overrideActive = false;
    if (this.state !== 'refused') {
      this.state = 'closed';
    }
    if (!this.closedByUser && this.state !== 'refused') {
      this.reconnectTimer = setTimeout(() => this.connect(), this.reconnectDelayMs);
    }
  }

  private handleMessage(raw: string): void {
    let msg: RuntimeMessage;
    try {
      msg = parseRuntimeMessage(raw);
    } catch (err) {
      this.lastError = String(err);
      return;
    }
    switch (msg.type) {
      case 'hello':
        try {
          checkProtocol(msg);
        } catch (err) {
          this.lastError = String(err);
          this.state = 'refused';
          this.socket?.close();
          return;
        }
        this.state = 'connected';
        this.hasAuthority = Boolean(msg.authority);
        return;
      case 'state':
        this.framesSeen += 1;
        if (msg.episode !== this.currentEpisode) {
          this.currentEpisode = msg.episode;
          this.episodeTicks = [];
        }
        this.episodeTicks.push({ tick: msg.tick, intervened: msg.intervened });
        this.latestFrame = msg;
        this.onframe?.(msg);
        return;
      case 'episode_end':
        this.metrics.push(msg);
        this.onepisode?.();
        return;
      case 'error':
        this.lastError = msg.message;
        return;
    }
  }

  // -- operator side -------------------------------------------------------

  sendInput(axes: number[], override: boolean, stopButton: boolean): number {
    if (this.state !== 'connected' || !this.socket) {
      return -1;
    }
    this.overrideActive = override;
    this.socket.send(JSON.stringify(makeInput(axes, override, stopButton)));
    const tick = this.latestFrame?.tick ?? 0;
    if (stopButton) {
      this.stopLabels.push({
        tick,
        episode: this.latestFrame?.episode ?? -1,
        primitive: this.latestFrame?.primitive ?? '',
      });
    }
    // the input takes effect at the next control tick; report the tick we
    // observed when it left
    return tick;
  }

  sendControl(command: ControlMessage['command']): void {
    if (this.state === 'connected' && this.socket) {
      this.socket.send(JSON.stringify({ type: 'control', command }));
    }
  }

  // contiguous intervened spans of the current episode, for the timeline
  interventionSpans(): TimelineSpan[] {
    const spans: TimelineSpan[] = [];
    let open: TimelineSpan | null = null;
    for (const { tick, intervened } of this.episodeTicks) {
      if (intervened) {
        if (open && tick === open.end + 1) {
          open.end = tick;
        } else {
          open = { start: tick, end: tick };
          spans.push(open);
        }
      } else if (open) {
        open = null;
      }
    }
    return spans;
  }

  close(): void {
    this.closedByUser = true;
    if (this.reconnectTimer !== null) {
      clearTimeout(this.reconnectTimer);
    }
    this.socket?.close();
    this.state = 'closed';
  }
}
