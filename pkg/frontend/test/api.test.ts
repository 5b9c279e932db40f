// ApiClient over a real local HTTP server (the fake service mounted on
// node:http), exercising the actual fetch path and error mapping.

import { createServer, Server } from 'node:http';
import { AddressInfo } from 'node:net';

import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { ApiClient, ApiError } from '../src/api.js';
import { FakeReviewService } from './fake_service.js';

let server: Server;
let fake: FakeReviewService;
let client: ApiClient;

beforeAll(async () => {
  fake = new FakeReviewService({
    autoPositive: 5,
    autoNegative: 3,
    humanScores: [0.5, 0.62],
    planeSize: 4,
  });
  server = createServer((req, res) => {
    const chunks: Buffer[] = [];
    req.on('data', (c) => chunks.push(c));
    req.on('end', () => {
      void fake
        .fetch(`http://fake${req.url ?? '/'}`, {
          method: req.method ?? 'GET',
          body: chunks.length > 0 ? Buffer.concat(chunks).toString('utf-8') : undefined,
        })
        .then(async (reply) => {
          res.writeHead(reply.status, { 'Content-Type': 'application/json' });
          res.end(await reply.text());
        });
    });
  });
  await new Promise<void>((resolve) => server.listen(0, '127.0.0.1', resolve));
  const addr = server.address() as AddressInfo;
  client = new ApiClient(`http://127.0.0.1:${addr.port}`);
});

afterAll(async () => {
  await new Promise<void>((resolve, reject) =>
    server.close((err) => (err ? reject(err) : resolve())),
  );
});

describe('ApiClient over HTTP', () => {
  it('reads health', async () => {
    const health = await client.health();
    expect(health.status).toBe('ok');
  });

  it('pages the queue and fetches one sample', async () => {
    const page = await client.queue(1);
    expect(page.pending).toBe(2);
    expect(page.items.length).toBe(1);
    expect(page.items[0].channels!.length).toBe(9);

    const sample = await client.sample(page.items[0].id);
    expect(sample.id).toBe(page.items[0].id);
    expect(sample.verdict).toBeNull();
  });

  it('round-trips a verdict and sees it in stats', async () => {
    const before = await client.stats();
    const ack = await client.verdict('h001', 'false_positive', 'tester');
    expect(ack.ok).toBe(true);
    expect(ack.active_label).toBe('false_positive');
    expect(ack.seq).toBeGreaterThan(0);

    const after = await client.stats();
    expect(after.human_reviewed).toBe(before.human_reviewed + 1);
    expect(after.human_pending).toBe(before.human_pending - 1);
    expect(fake.verdictLog.length).toBe(1);
  });

  it('maps error replies onto ApiError with the server message', async () => {
    const missing = await client.sample('h999').then(
      () => null,
      (e) => e as ApiError,
    );
    expect(missing).toBeInstanceOf(ApiError);
    expect(missing!.status).toBe(404);
    expect(missing!.message).toContain('h999');

    const bad = await client
      .verdict('h000', 'maybe' as never)
      .then(
        () => null,
        (e) => e as ApiError,
      );
    expect(bad).toBeInstanceOf(ApiError);
    expect(bad!.status).toBe(400);
  });

  it('rejects when the server is unreachable', async () => {
    const dead = new ApiClient('http://127.0.0.1:1');
    await expect(dead.health()).rejects.toThrow();
  });
});
