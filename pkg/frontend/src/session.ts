// Review session state machine. Pure of DOM concerns so it can be driven
// and inspected from tests; main.ts wires it to the page.
//
// Queue discipline: the server orders pending items most-ambiguous-first
// and that order is static, so the session pages with a growing limit —
// enough to see past locally skipped items — and keeps the current item
// plus one prefetched. Verdicts are optimistic: the view advances
// immediately and rolls back if the server rejects. At most one verdict
// request is in flight at a time; the session verdict count comes only
// from acknowledged server replies.

import { ApiClient } from './api.js';
import { conservationHolds, QueueItem, ReviewStats, VerdictAck, VerdictLabel } from './types.js';

export type Phase = 'loading' | 'reviewing' | 'done' | 'error';

export interface SessionView {
  phase: Phase;
  current: QueueItem | null;
  prefetchedId: string | null;
  pendingTotal: number;
  sessionReviewed: number;
  stats: ReviewStats | null;
  conservationOk: boolean;
  busy: boolean;
  error: string | null;
}

function describeError(e: unknown): string {
  if (e instanceof Error) {
    return e.message;
  }
  return String(e);
}

export class ReviewSession {
  reviewer = '';

  private readonly api: ApiClient;
  private readonly onChange: (view: SessionView) => void;

  private phase: Phase = 'loading';
  private buffer: QueueItem[] = [];
  private deferred: string[] = [];
  private acks: VerdictAck[] = [];
  private pendingTotal = 0;
  private stats: ReviewStats | null = null;
  private conservationOk = true;
  private submitting = false;
  private error: string | null = null;

  constructor(api: ApiClient, onChange?: (view: SessionView) => void) {
    this.api = api;
    this.onChange = onChange ?? (() => {});
  }

  view(): SessionView {
    return {
      phase: this.phase,
      current: this.buffer.length > 0 ? this.buffer[0] : null,
      prefetchedId: this.buffer.length > 1 ? this.buffer[1].id : null,
      pendingTotal: this.pendingTotal,
      sessionReviewed: this.acks.length,
      stats: this.stats,
      conservationOk: this.conservationOk,
      busy: this.submitting,
      error: this.error,
    };
  }

  acknowledged(): readonly VerdictAck[] {
    return this.acks;
  }

  private emit(): void {
    this.onChange(this.view());
  }

  /** Initial load; on failure the phase becomes 'error' and start() can be retried. */
  async start(): Promise<void> {
    this.phase = 'loading';
    this.error = null;
    this.emit();
    try {
      await this.syncQueue();
      await this.syncStats();
      this.phase = this.pendingTotal === 0 ? 'done' : 'reviewing';
    } catch (e) {
      this.phase = 'error';
      this.error = describeError(e);
    }
    this.emit();
  }

  /**
   * Record a verdict for the current item. Advances to the prefetched item
   * immediately; a server rejection puts the item back at the front and
   * leaves the session count untouched. Returns true on acknowledgment.
   */
  async submit(label: VerdictLabel): Promise<boolean> {
    if (this.submitting || this.phase !== 'reviewing' || this.buffer.length === 0) {
      return false;
    }
    const item = this.buffer[0];
    this.submitting = true;
    this.error = null;
    this.buffer = this.buffer.slice(1);
    this.emit();
    try {
      const ack = await this.api.verdict(item.id, label, this.reviewer);
      this.acks.push(ack);
      this.deferred = this.deferred.filter((id) => id !== item.id);
      this.submitting = false;
      await this.refresh();
      return true;
    } catch (e) {
      this.buffer = [item, ...this.buffer];
      this.error = describeError(e);
      this.submitting = false;
      this.emit();
      return false;
    }
  }

  /** Push the current item to the back of the rotation without a verdict. */
  async skip(): Promise<void> {
    if (this.submitting || this.phase !== 'reviewing' || this.buffer.length === 0) {
      return;
    }
    const item = this.buffer[0];
    this.deferred = [...this.deferred.filter((id) => id !== item.id), item.id];
    this.buffer = this.buffer.filter((i) => i.id !== item.id);
    await this.refresh();
  }

  /** Re-sync queue and stats; used after every action and by the retry banner. */
  async refresh(): Promise<void> {
    try {
      await this.syncQueue();
      await this.syncStats();
      this.error = null;
    } catch (e) {
      this.error = describeError(e);
    }
    this.emit();
  }

  private async syncQueue(): Promise<void> {
    // Enough of the queue head to guarantee two not-skipped items when any exist.
    const page = await this.api.queue(this.deferred.length + 2);
    this.pendingTotal = page.pending;
    if (page.pending === 0) {
      this.buffer = [];
      this.deferred = [];
      this.phase = 'done';
      return;
    }
    if (page.items.length >= page.pending) {
      // Full view of the pending set: forget skips that are no longer pending.
      const pendingIds = new Set(page.items.map((i) => i.id));
      this.deferred = this.deferred.filter((id) => pendingIds.has(id));
    }
    const deferredSet = new Set(this.deferred);
    const byId = new Map(page.items.map((i) => [i.id, i]));
    const fresh = page.items.filter((i) => !deferredSet.has(i.id));
    // Skipped items come back around after the fresh ones, oldest skip first.
    const revisit = this.deferred.filter((id) => byId.has(id)).map((id) => byId.get(id)!);
    this.buffer = [...fresh, ...revisit].slice(0, 2);
  }

  private async syncStats(): Promise<void> {
    this.stats = await this.api.stats();
    this.conservationOk = conservationHolds(this.stats);
  }
}
