// Shapes exchanged with the review service. Field names mirror the JSON
// bodies exactly; everything here is plain data.

export interface ChannelPlane {
  depth: number;
  group: number;
  min: number;
  max: number;
  pixels: number[][];
}

export interface QueueItem {
  id: string;
  score: number;
  bucket: string;
  combo: number[];
  enqueued_at: string;
  channels?: ChannelPlane[];
  verdict?: string | null;
}

export interface QueuePage {
  items: QueueItem[];
  pending: number;
}

export interface VerdictAck {
  ok: boolean;
  id: string;
  active_label: string;
  seq: number;
}

export interface TriagePolicyDict {
  positive_threshold: number;
  negative_threshold: number;
}

export interface ReviewStats {
  total: number;
  auto_positive: number;
  auto_negative: number;
  human_pending: number;
  human_reviewed: number;
  remaining_ratio: number;
  policy: TriagePolicyDict;
}

export interface HealthReply {
  status: string;
  version: string;
}

export type VerdictLabel = 'object' | 'false_positive';

export const VERDICT_LABELS: readonly VerdictLabel[] = ['object', 'false_positive'];

/** auto_pos + auto_neg + pending + reviewed must always equal total. */
export function conservationHolds(stats: ReviewStats): boolean {
  return (
    stats.auto_positive + stats.auto_negative + stats.human_pending + stats.human_reviewed ===
    stats.total
  );
}
