import { readFileSync } from 'node:fs';
import { describe, expect, it } from 'vitest';
import { MetricsStore, metricsLineToEpisodeEnd } from '../src/metrics.js';

const FIXTURE = new URL('./fixtures/metrics.jsonl', import.meta.url);

function fixtureLines(): string[] {
  return readFileSync(FIXTURE, 'utf-8').trim().split('\n');
}

describe('metrics store', () => {
  it('replaying the runtime metrics log reproduces it exactly', () => {
    // the console never recomputes: displayed values must be the very
    // numbers the runtime logged, bit for bit
    const store = new MetricsStore();
    const lines = fixtureLines();
    for (const line of lines) {
      store.push(metricsLineToEpisodeEnd(line));
    }
    expect(store.points.length).toBe(lines.length);
    lines.forEach((line, i) => {
      const logged = JSON.parse(line);
      const shown = store.points[i];
      expect(shown.success_rate).toBe(logged.success_rate);
      expect(shown.cycle_time).toBe(logged.cycle_time);
      expect(shown.intervention_rate).toBe(logged.intervention_rate);
      expect(shown.outcome).toBe(logged.success);
    });
  });

  it('chart series carry (episode, value) pairs in order', () => {
    const store = new MetricsStore();
    for (const line of fixtureLines()) {
      store.push(metricsLineToEpisodeEnd(line));
    }
    const sr = store.series('success_rate');
    expect(sr.length).toBe(50);
    expect(sr[0][0]).toBe(0);
    expect(sr[49][0]).toBe(49);
    for (const [, v] of sr) {
      expect(v).toBeGreaterThanOrEqual(0);
      expect(v).toBeLessThanOrEqual(1);
    }
  });

  it('cycle series skips episodes without a defined cycle time', () => {
    const store = new MetricsStore();
    store.push({
      type: 'episode_end', episode: 0, outcome: false, cycle_steps: 90,
      intervention_ratio: 0, success_rate: 0, cycle_time: null,
      intervention_rate: 0,
    });
    store.push({
      type: 'episode_end', episode: 1, outcome: true, cycle_steps: 50,
      intervention_ratio: 0, success_rate: 0.5, cycle_time: 5.0,
      intervention_rate: 0,
    });
    expect(store.cycleSeries()).toEqual([[1, 5.0]]);
  });

  it('caps stored points at the configured bound', () => {
    const store = new MetricsStore(10);
    for (let i = 0; i < 25; i++) {
      store.push({
        type: 'episode_end', episode: i, outcome: true, cycle_steps: 1,
        intervention_ratio: 0, success_rate: 1, cycle_time: 0.1,
        intervention_rate: 0,
      });
    }
    expect(store.points.length).toBe(10);
    expect(store.points[0].episode).toBe(15);
    expect(store.latest()?.episode).toBe(24);
  });
});
