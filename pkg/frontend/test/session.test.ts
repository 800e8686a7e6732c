import { afterEach, describe, expect, it } from 'vitest';
import { WebSocketServer, WebSocket as WsSocket, type WebSocket } from 'ws';
import { ConsoleSession, type SocketLike } from '../src/session.js';
import { PROTOCOL_VERSION } from '../src/protocol.js';

function nodeFactory(url: string): SocketLike {
  return new WsSocket(url) as unknown as SocketLike;
}

function waitFor(pred: () => boolean, ms = 5000): Promise<void> {
  return new Promise((resolve, reject) => {
    const t0 = Date.now();
    const timer = setInterval(() => {
      if (pred()) {
        clearInterval(timer);
        resolve();
      } else if (Date.now() - t0 > ms) {
        clearInterval(timer);
        reject(new Error('timeout waiting for condition'));
      }
    }, 5);
  });
}

interface MockServer {
  wss: WebSocketServer;
  url: string;
  clients: WebSocket[];
  received: unknown[];
}

function startServer(protocol = PROTOCOL_VERSION): Promise<MockServer> {
  return new Promise((resolve) => {
    const wss = new WebSocketServer({ port: 0 }, () => {
      const addr = wss.address();
      const port = typeof addr === 'object' && addr ? addr.port : 0;
      resolve({ wss, url: `ws://127.0.0.1:${port}`, clients, received });
    });
    const clients: WebSocket[] = [];
    const received: unknown[] = [];
    wss.on('connection', (sock) => {
      clients.push(sock);
      sock.send(
        JSON.stringify({ type: 'hello', protocol, role: 'runtime', authority: true }),
      );
      sock.on('message', (data) => received.push(JSON.parse(String(data))));
    });
  });
}

const cleanups: (() => void)[] = [];
afterEach(() => {
  while (cleanups.length) cleanups.pop()!();
});

function stateFrame(tick: number, intervened = false, episode = 0) {
  return JSON.stringify({
    type: 'state', tick, episode, primitive: 'insert',
    pose: [1, 2, 3], velocity: [0, 0, 0], wrench: [0, 0, 0],
    image: null, intervened, metrics: { success_rate: 0.5 },
  });
}

describe('console session', () => {
  it('connects, checks the protocol, and receives frames', async () => {
    const srv = await startServer();
    cleanups.push(() => srv.wss.close());
    const session = new ConsoleSession(srv.url, nodeFactory);
    cleanups.push(() => session.close());
    await waitFor(() => session.state === 'connected');
    expect(session.hasAuthority).toBe(true);
    srv.clients[0].send(stateFrame(7));
    await waitFor(() => session.latestFrame !== null);
    expect(session.latestFrame!.tick).toBe(7);
    expect(session.latestFrame!.metrics.success_rate).toBe(0.5);
  });

  it('refuses on protocol mismatch and surfaces the error', async () => {
    const srv = await startServer(99);
    cleanups.push(() => srv.wss.close());
    const session = new ConsoleSession(srv.url, nodeFactory);
    cleanups.push(() => session.close());
    await waitFor(() => session.state === 'refused');
    expect(session.lastError).toMatch(/mismatch/);
  });

  it('sends operator input only while connected', async () => {
    const srv = await startServer();
    cleanups.push(() => srv.wss.close());
    const session = new ConsoleSession(srv.url, nodeFactory);
    cleanups.push(() => session.close());
    expect(session.sendInput([1, 0], true, false)).toBe(-1); // still connecting
    await waitFor(() => session.state === 'connected');
    session.sendInput([0.3, -0.1], true, true);
    await waitFor(() => srv.received.length >= 2); // hello + input
    const input = srv.received.find(
      (m) => (m as { type: string }).type === 'input',
    ) as { axes: number[]; override: boolean; stop_button: boolean };
    expect(input.axes).toEqual([0.3, -0.1]);
    expect(input.override).toBe(true);
    expect(input.stop_button).toBe(true);
  });

  it('reconnects after a drop with the override released', async () => {
    const srv = await startServer();
    cleanups.push(() => srv.wss.close());
    const session = new ConsoleSession(srv.url, nodeFactory);
    session.reconnectDelayMs = 50;
    cleanups.push(() => session.close());
    await waitFor(() => session.state === 'connected');
    session.sendInput([1, 0], true, false);
    expect(session.overrideActive).toBe(true);
    srv.clients[0].close();
    await waitFor(() => session.state !== 'connected');
    expect(session.overrideActive).toBe(false);
    await waitFor(() => session.state === 'connected');
    // fresh connection: still released until the operator re-engages
    expect(session.overrideActive).toBe(false);
    expect(srv.clients.length).toBe(2);
  });

  it('tracks contiguous intervention spans per episode', async () => {
    const srv = await startServer();
    cleanups.push(() => srv.wss.close());
    const session = new ConsoleSession(srv.url, nodeFactory);
    cleanups.push(() => session.close());
    await waitFor(() => session.state === 'connected');
    const pattern = [false, true, true, true, false, true, false];
    pattern.forEach((iv, i) => srv.clients[0].send(stateFrame(i + 1, iv)));
    await waitFor(() => session.framesSeen === pattern.length);
    expect(session.interventionSpans()).toEqual([
      { start: 2, end: 4 },
      { start: 6, end: 6 },
    ]);
    // a new episode resets the timeline
    srv.clients[0].send(stateFrame(1, true, 1));
    await waitFor(() => session.framesSeen === pattern.length + 1);
    expect(session.interventionSpans()).toEqual([{ start: 1, end: 1 }]);
  });

  it('records stop labels in the session label buffer', async () => {
    const srv = await startServer();
    cleanups.push(() => srv.wss.close());
    const session = new ConsoleSession(srv.url, nodeFactory);
    cleanups.push(() => session.close());
    await waitFor(() => session.state === 'connected');
    srv.clients[0].send(stateFrame(12));
    await waitFor(() => session.latestFrame !== null);
    session.sendInput([0, 0], false, true);
    session.sendInput([0, 0], false, false); // no label without the button
    expect(session.stopLabels).toEqual([
      { tick: 12, episode: 0, primitive: 'insert' },
    ]);
  });

  it('feeds episode_end messages into the metrics store untouched', async () => {
    const srv = await startServer();
    cleanups.push(() => srv.wss.close());
    const session = new ConsoleSession(srv.url, nodeFactory);
    cleanups.push(() => session.close());
    await waitFor(() => session.state === 'connected');
    srv.clients[0].send(
      JSON.stringify({
        type: 'episode_end', episode: 0, outcome: true, cycle_steps: 54,
        intervention_ratio: 0.25, success_rate: 0.9,
        cycle_time: 5.4, intervention_rate: 0.1,
      }),
    );
    await waitFor(() => session.metrics.points.length === 1);
    const p = session.metrics.latest()!;
    expect(p.success_rate).toBe(0.9);
    expect(p.cycle_time).toBe(5.4);
  });
});
