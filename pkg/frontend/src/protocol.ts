// Console-bridge wire protocol: JSON text frames over a WebSocket.
// The runtime is authoritative; the console displays what it is sent and
// never recomputes metrics (so charts match the runtime logs exactly).

export const PROTOCOL_VERSION = 1;

export interface HelloMessage {
  type: 'hello';
  protocol: number;
  role: 'runtime' | 'console';
  authority?: boolean;
}

export interface MetricsSnapshot {
  success_rate?: number;
  cycle_time?: number | null;
  intervention_rate?: number;
  episodes?: number;
}

export interface StateFrame {
  type: 'state';
  tick: number;
  episode: number;
  primitive: string;
  pose: [number, number, number];       // x mm, z mm, c deg
  velocity: [number, number, number];
  wrench: [number, number, number];     // Fx N, Fz N, Mc N*m
  image: number[] | null;               // 16x16 occupancy, row-major
  intervened: boolean;
  metrics: MetricsSnapshot;
}

export interface EpisodeEndMessage {
  type: 'episode_end';
  episode: number;
  outcome: boolean;
  cycle_steps: number;
  intervention_ratio: number;
  success_rate: number;
  cycle_time: number | null;
  intervention_rate: number;
}

export interface ErrorMessage {
  type: 'error';
  message: string;
}

export type RuntimeMessage =
  | HelloMessage
  | StateFrame
  | EpisodeEndMessage
  | ErrorMessage;

export interface OperatorInputMessage {
  type: 'input';
  axes: number[];
  override: boolean;
  stop_button: boolean;
}

export interface ControlMessage {
  type: 'control';
  command: 'start' | 'pause' | 'reset';
}

export function makeHello(): HelloMessage {
  return { type: 'hello', protocol: PROTOCOL_VERSION, role: 'console' };
}

export function makeInput(
  axes: number[],
  override: boolean,
  stopButton: boolean,
): OperatorInputMessage {
  return { type: 'input', axes, override, stop_button: stopButton };
}

export function parseRuntimeMessage(raw: string): RuntimeMessage {
  let obj: unknown;
  try {
    obj = JSON.parse(raw);
  } catch {
    throw new Error(`malformed frame: ${raw.slice(0, 80)}`);
  }
  const msg = obj as { type?: string };
  switch (msg.type) {
    case 'hello':
    case 'state':
    case 'episode_end':
    case 'error':
      return obj as RuntimeMessage;
    default:
      throw new Error(`unknown message type: ${String(msg.type)}`);
  }
}

export function checkProtocol(hello: HelloMessage): void {
  if (hello.protocol !== PROTOCOL_VERSION) {
    throw new Error(
      `protocol mismatch: runtime speaks ${hello.protocol}, console speaks ${PROTOCOL_VERSION}`,
    );
  }
}
