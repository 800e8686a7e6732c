// Rolling-metric chart series. Values come straight from the runtime's
// episode_end messages (the same numbers it writes to metrics.jsonl);
// the console only stores and windows them for display.

import type { EpisodeEndMessage } from './protocol.js';

export interface MetricPoint {
  episode: number;
  success_rate: number;
  cycle_time: number | null;
  intervention_rate: number;
  outcome: boolean;
}

export class MetricsStore {
  readonly points: MetricPoint[] = [];
  readonly maxPoints: number;

  constructor(maxPoints = 2000) {
    this.maxPoints = maxPoints;
  }

  push(msg: EpisodeEndMessage): void {
    this.points.push({
      episode: msg.episode,
      success_rate: msg.success_rate,
      cycle_time: msg.cycle_time,
      intervention_rate: msg.intervention_rate,
      outcome: msg.outcome,
    });
    if (this.points.length > this.maxPoints) {
      this.points.splice(0, this.points.length - this.maxPoints);
    }
  }

  latest(): MetricPoint | null {
    return this.points.length ? this.points[this.points.length - 1] : null;
  }

  series(key: 'success_rate' | 'intervention_rate'): [number, number][] {
    return this.points.map((p) => [p.episode, p[key]]);
  }

  cycleSeries(): [number, number][] {
    const out: [number, number][] = [];
    for (const p of this.points) {
      if (p.cycle_time !== null && p.cycle_time !== undefined) {
        out.push([p.episode, p.cycle_time]);
      }
    }
    return out;
  }
}

// Parses one line of the runtime's metrics JSONL into the same shape the
// live stream delivers, used by tests to prove replay equals display.
export function metricsLineToEpisodeEnd(line: string): EpisodeEndMessage {
  const d = JSON.parse(line) as {
    episode: number;
    success: boolean;
    cycle_steps: number;
    intervention_ratio: number;
    success_rate: number;
    cycle_time: number | null;
    intervention_rate: number;
  };
  return {
    type: 'episode_end',
    episode: d.episode,
    outcome: d.success,
    cycle_steps: d.cycle_steps,
    intervention_ratio: d.intervention_ratio,
    success_rate: d.success_rate,
    cycle_time: d.cycle_time,
    intervention_rate: d.intervention_rate,
  };
}
