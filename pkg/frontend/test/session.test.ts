// Review-loop behavior: the session shows every human-bucket item exactly
// once on a straight run-through, each verdict lands exactly one durable
// log line on the server, and the stats conservation identity holds after
// every action.

import { describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api.js';
import { ReviewSession, SessionView } from '../src/session.js';
import { conservationHolds } from '../src/types.js';
import { FakeReviewService } from './fake_service.js';

function makeFake(humanScores: number[], extra: Partial<FakeReviewService> = {}) {
  const fake = new FakeReviewService({
    autoPositive: 30,
    autoNegative: 13,
    humanScores,
    planeSize: 4,
  });
  Object.assign(fake, extra);
  return fake;
}

function connect(fake: FakeReviewService) {
  const views: SessionView[] = [];
  const api = new ApiClient('http://fake', fake.fetch);
  const session = new ReviewSession(api, (v) => views.push(v));
  return { session, views };
}

describe('review session', () => {
  it('walks every queued item exactly once and reaches completion', async () => {
    const fake = makeFake([0.45, 0.52, 0.61, 0.38, 0.5, 0.57, 0.44]);
    const { session, views } = connect(fake);
    await session.start();

    expect(session.view().phase).toBe('reviewing');
    expect(session.view().pendingTotal).toBe(7);

    const displayed: string[] = [];
    for (let guard = 0; guard < 20 && session.view().phase === 'reviewing'; guard++) {
      const current = session.view().current;
      expect(current).not.toBeNull();
      displayed.push(current!.id);
      const before = fake.verdictLog.length;
      const ok = await session.submit(guard % 2 === 0 ? 'object' : 'false_positive');
      expect(ok).toBe(true);
      expect(fake.verdictLog.length).toBe(before + 1);
    }

    expect(session.view().phase).toBe('done');
    expect(displayed.length).toBe(7);
    expect(new Set(displayed)).toEqual(new Set(fake.humanIds()));
    expect(session.acknowledged().length).toBe(7);
    expect(fake.verdictLog.length).toBe(7);
    // every view that carried stats satisfied the conservation identity
    for (const v of views) {
      if (v.stats !== null) {
        expect(conservationHolds(v.stats)).toBe(true);
        expect(v.conservationOk).toBe(true);
      }
    }
  });

  it('orders items most ambiguous first and prefetches one ahead', async () => {
    const fake = makeFake([0.3, 0.5, 0.7, 0.45]);
    const { session } = connect(fake);
    await session.start();

    // mid = 0.5, so h001 (0.5) then h003 (0.45) lead the queue
    expect(session.view().current!.id).toBe('h001');
    expect(session.view().prefetchedId).toBe('h003');
    await session.submit('object');
    expect(session.view().current!.id).toBe('h003');
  });

  it('counts verdicts only from acknowledged server replies', async () => {
    const fake = makeFake([0.5, 0.6]);
    fake.failVerdictOnce.add('h000');
    const { session } = connect(fake);
    await session.start();

    expect(session.view().current!.id).toBe('h000');
    const ok = await session.submit('object');
    expect(ok).toBe(false);
    // rolled back: same item retained, nothing counted, nothing logged
    expect(session.view().current!.id).toBe('h000');
    expect(session.view().sessionReviewed).toBe(0);
    expect(fake.verdictLog.length).toBe(0);
    expect(session.view().error).toContain('synthetic write failure');

    const retry = await session.submit('object');
    expect(retry).toBe(true);
    expect(session.view().sessionReviewed).toBe(1);
    expect(fake.verdictLog.length).toBe(1);
    expect(session.view().error).toBeNull();
  });

  it('skip defers an item to the back of the rotation', async () => {
    const fake = makeFake([0.5, 0.48, 0.56]);
    const { session } = connect(fake);
    await session.start();

    const first = session.view().current!.id;
    await session.skip();
    expect(session.view().current!.id).not.toBe(first);
    // no verdict was recorded for the skip
    expect(fake.verdictLog.length).toBe(0);
    expect(session.view().pendingTotal).toBe(3);

    // review the two fresh items; the skipped one comes back around
    await session.submit('object');
    await session.submit('false_positive');
    expect(session.view().phase).toBe('reviewing');
    expect(session.view().current!.id).toBe(first);
    await session.submit('object');
    expect(session.view().phase).toBe('done');
    expect(fake.verdictLog.length).toBe(3);
  });

  it('holds at most one verdict request in flight', async () => {
    const fake = makeFake([0.5, 0.6]);
    let release!: () => void;
    fake.verdictGate = new Promise((resolve) => {
      release = resolve;
    });
    const { session } = connect(fake);
    await session.start();

    const firstSubmit = session.submit('object');
    const whileBusy = await session.submit('object');
    expect(whileBusy).toBe(false);
    expect(session.view().busy).toBe(true);

    fake.verdictGate = null;
    release();
    expect(await firstSubmit).toBe(true);
    expect(fake.verdictLog.length).toBe(1);
  });

  it('treats an empty queue as stable completion', async () => {
    const fake = makeFake([]);
    const { session } = connect(fake);
    await session.start();
    expect(session.view().phase).toBe('done');
    expect(session.view().pendingTotal).toBe(0);
    await session.refresh();
    expect(session.view().phase).toBe('done');
    expect(session.view().error).toBeNull();
  });

  it('surfaces an initial load failure and recovers on retry', async () => {
    const fake = makeFake([0.5]);
    fake.failNextQueue = true;
    const { session } = connect(fake);
    await session.start();
    expect(session.view().phase).toBe('error');
    expect(session.view().error).toContain('synthetic outage');

    await session.start();
    expect(session.view().phase).toBe('reviewing');
    expect(session.view().current!.id).toBe('h000');
  });

  it('flags a broken conservation identity instead of hiding it', async () => {
    const fake = makeFake([0.5]);
    fake.corruptStats = true;
    const { session } = connect(fake);
    await session.start();
    expect(session.view().conservationOk).toBe(false);
  });

  it('reflects concurrent reviewers without double-displaying their items', async () => {
    const fake = makeFake([0.5, 0.55, 0.45, 0.6]);
    const { session } = connect(fake);
    await session.start();

    // someone else reviews an item that is not on screen here
    const elsewhere = fake
      .humanIds()
      .find(
        (id) => id !== session.view().current!.id && id !== session.view().prefetchedId,
      )!;
    await fake.fetch('http://fake/api/verdict', {
      method: 'POST',
      body: JSON.stringify({ id: elsewhere, label: 'object', reviewer: 'other' }),
    });

    const displayed = new Set<string>();
    for (let guard = 0; guard < 10 && session.view().phase === 'reviewing'; guard++) {
      displayed.add(session.view().current!.id);
      await session.submit('object');
    }
    expect(session.view().phase).toBe('done');
    expect(displayed.has(elsewhere)).toBe(false);
    expect(displayed.size).toBe(3);
    expect(fake.verdictLog.length).toBe(4);
    expect(session.view().stats!.human_reviewed).toBe(4);
  });
});
