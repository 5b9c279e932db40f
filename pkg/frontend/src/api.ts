// Thin typed client for the review service. The fetch implementation is
// injectable so tests can run against a stub or a local HTTP server.

import {
  HealthReply,
  QueueItem,
  QueuePage,
  ReviewStats,
  VerdictAck,
  VerdictLabel,
} from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, message: string) {
    super(message);
    this.name = 'ApiError';
    this.status = status;
  }
}

async function parseReply<T>(res: Response): Promise<T> {
  let body: unknown = null;
  try {
    body = await res.json();
  } catch {
    // fall through; non-JSON bodies are reported by status alone
  }
  if (!res.ok) {
    const detail =
      body && typeof body === 'object' && 'error' in body
        ? String((body as { error: unknown }).error)
        : `HTTP ${res.status}`;
    throw new ApiError(res.status, detail);
  }
  return body as T;
}

export class ApiClient {
  private readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl = '', fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/$/, '');
    this.fetchImpl = fetchImpl ?? ((url, init) => globalThis.fetch(url, init));
  }

  private async get<T>(path: string): Promise<T> {
    const res = await this.fetchImpl(this.baseUrl + path);
    return parseReply<T>(res);
  }

  health(): Promise<HealthReply> {
    return this.get<HealthReply>('/api/health');
  }

  queue(limit?: number): Promise<QueuePage> {
    const suffix = limit === undefined ? '' : `?limit=${limit}`;
    return this.get<QueuePage>(`/api/queue${suffix}`);
  }

  sample(id: string): Promise<QueueItem> {
    return this.get<QueueItem>(`/api/sample/${encodeURIComponent(id)}`);
  }

  stats(): Promise<ReviewStats> {
    return this.get<ReviewStats>('/api/stats');
  }

  async verdict(id: string, label: VerdictLabel, reviewer = ''): Promise<VerdictAck> {
    const res = await this.fetchImpl(this.baseUrl + '/api/verdict', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ id, label, reviewer }),
    });
    return parseReply<VerdictAck>(res);
  }
}
