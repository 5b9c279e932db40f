// In-memory stand-in for the review service, implementing the same five
// endpoints with the same ordering, validation, and stats semantics. Its
// verdict log is an array of JSON lines so tests can count exactly how
// many durable records each action produced.

import { FetchLike } from '../src/api.js';
import { ChannelPlane, QueueItem, ReviewStats, TriagePolicyDict } from '../src/types.js';

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

function makeChannels(rand: () => number, combo: number[], size: number): ChannelPlane[] {
  const planes: ChannelPlane[] = [];
  for (const depth of combo) {
    const groups = depth === combo[0] ? 1 : combo[0] / depth;
    for (let g = 0; g < groups; g++) {
      const pixels: number[][] = [];
      let min = Infinity;
      let max = -Infinity;
      for (let y = 0; y < size; y++) {
        const row: number[] = [];
        for (let x = 0; x < size; x++) {
          const v = Math.round((rand() * 2 - 1) * 1e6) / 1e6;
          row.push(v);
          min = Math.min(min, v);
          max = Math.max(max, v);
        }
        pixels.push(row);
      }
      planes.push({ depth, group: g, min, max, pixels });
    }
  }
  return planes;
}

export interface FakeConfig {
  autoPositive: number;
  autoNegative: number;
  humanScores: number[];
  policy?: TriagePolicyDict;
  combo?: number[];
  planeSize?: number;
}

export class FakeReviewService {
  readonly policy: TriagePolicyDict;
  readonly humans: QueueItem[];
  readonly autoPositive: number;
  readonly autoNegative: number;

  verdictLog: string[] = [];
  active = new Map<string, { label: string; seq: number }>();
  seq = 0;

  failVerdictOnce = new Set<string>();
  failNextQueue = false;
  corruptStats = false;
  verdictGate: Promise<void> | null = null;

  constructor(cfg: FakeConfig) {
    this.policy = cfg.policy ?? { positive_threshold: 0.8, negative_threshold: 0.2 };
    this.autoPositive = cfg.autoPositive;
    this.autoNegative = cfg.autoNegative;
    const combo = cfg.combo ?? [32, 4];
    const size = cfg.planeSize ?? 20;
    const rand = mulberry32(7);
    this.humans = cfg.humanScores.map((score, i) => ({
      id: `h${String(i).padStart(3, '0')}`,
      score,
      bucket: 'human',
      combo,
      enqueued_at: '2026-01-01T00:00:00Z',
      channels: makeChannels(rand, combo, size),
    }));
  }

  humanIds(): string[] {
    return this.humans.map((h) => h.id);
  }

  private pendingSorted(): QueueItem[] {
    const mid = (this.policy.positive_threshold + this.policy.negative_threshold) / 2;
    return this.humans
      .filter((h) => !this.active.has(h.id))
      .sort((a, b) => Math.abs(a.score - mid) - Math.abs(b.score - mid) || (a.id < b.id ? -1 : 1));
  }

  stats(): ReviewStats {
    const reviewed = this.active.size;
    const total = this.autoPositive + this.autoNegative + this.humans.length;
    return {
      total: this.corruptStats ? total + 1 : total,
      auto_positive: this.autoPositive,
      auto_negative: this.autoNegative,
      human_pending: this.humans.length - reviewed,
      human_reviewed: reviewed,
      remaining_ratio: total > 0 ? this.humans.length / total : 0,
      policy: this.policy,
    };
  }

  /** Drop-in for the ApiClient's fetch implementation. */
  fetch: FetchLike = async (url, init) => {
    const method = init?.method ?? 'GET';
    const u = new URL(url, 'http://fake');
    const path = u.pathname;

    const json = (body: unknown, status = 200) =>
      new Response(JSON.stringify(body), {
        status,
        headers: { 'Content-Type': 'application/json' },
      });

    if (method === 'GET' && path === '/api/health') {
      return json({ status: 'ok', version: 'fake' });
    }

    if (method === 'GET' && path === '/api/queue') {
      if (this.failNextQueue) {
        this.failNextQueue = false;
        return json({ error: 'synthetic outage' }, 503);
      }
      const pending = this.pendingSorted();
      const rawLimit = u.searchParams.get('limit');
      let items = pending;
      if (rawLimit !== null) {
        const limit = Number(rawLimit);
        if (!Number.isInteger(limit) || limit < 0) {
          return json({ error: `limit must be >= 0, got ${rawLimit}` }, 400);
        }
        items = pending.slice(0, limit);
      }
      return json({ items, pending: pending.length });
    }

    if (method === 'GET' && path.startsWith('/api/sample/')) {
      const id = decodeURIComponent(path.slice('/api/sample/'.length));
      const item = this.humans.find((h) => h.id === id);
      if (!item) {
        return json({ error: `unknown sample id '${id}'` }, 404);
      }
      return json({ ...item, verdict: this.active.get(id)?.label ?? null });
    }

    if (method === 'GET' && path === '/api/stats') {
      return json(this.stats());
    }

    if (method === 'POST' && path === '/api/verdict') {
      if (this.verdictGate !== null) {
        await this.verdictGate;
      }
      let payload: { id?: string; label?: string; reviewer?: string };
      try {
        payload = JSON.parse(String(init?.body ?? ''));
      } catch {
        return json({ error: 'body must be valid JSON' }, 400);
      }
      if (!payload.id || !payload.label) {
        return json({ error: 'body must be {"id", "label", "reviewer"?}' }, 400);
      }
      if (payload.label !== 'object' && payload.label !== 'false_positive') {
        return json({ error: `bad label ${payload.label}` }, 400);
      }
      const item = this.humans.find((h) => h.id === payload.id);
      if (!item) {
        return json({ error: `unknown sample id '${payload.id}'` }, 404);
      }
      if (this.failVerdictOnce.has(payload.id)) {
        this.failVerdictOnce.delete(payload.id);
        return json({ error: 'synthetic write failure' }, 500);
      }
      this.seq += 1;
      const rec = {
        seq: this.seq,
        id: payload.id,
        label: payload.label,
        reviewer: payload.reviewer ?? '',
        score: item.score,
        timestamp: '2026-01-01T00:00:00Z',
      };
      this.verdictLog.push(JSON.stringify(rec));
      this.active.set(payload.id, { label: payload.label, seq: this.seq });
      return json({ ok: true, id: payload.id, active_label: payload.label, seq: this.seq });
    }

    return json({ error: `unknown endpoint ${path}` }, 404);
  };
}
