// Page wiring: instantiate the session against the serving origin, render
// its view into the static shell, and arm the keyboard shortcuts
// (o = object, f = false positive, s = skip, c = contrast mode).

import { ApiClient } from './api.js';
import { STRETCH_MODES, StretchMode } from './contrast.js';
import { renderChannelGrid } from './render.js';
import { ReviewSession, SessionView } from './session.js';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function fmt(x: number, digits = 4): string {
  return x.toFixed(digits);
}

export function boot(): void {
  const banner = el<HTMLDivElement>('banner');
  const bannerText = el<HTMLSpanElement>('banner-text');
  const retryBtn = el<HTMLButtonElement>('btn-retry');
  const queueInfo = el<HTMLDivElement>('queue-info');
  const reviewerInput = el<HTMLInputElement>('reviewer');
  const viewer = el<HTMLElement>('viewer');
  const itemMeta = el<HTMLDivElement>('item-meta');
  const grid = el<HTMLDivElement>('channel-grid');
  const statsPane = el<HTMLDivElement>('stats-pane');
  const completion = el<HTMLElement>('completion');
  const objectBtn = el<HTMLButtonElement>('btn-object');
  const bogusBtn = el<HTMLButtonElement>('btn-bogus');
  const skipBtn = el<HTMLButtonElement>('btn-skip');
  const contrastBtn = el<HTMLButtonElement>('btn-contrast');

  let mode: StretchMode = 'minmax';
  let lastView: SessionView | null = null;

  const api = new ApiClient('');
  const session = new ReviewSession(api, (view) => {
    lastView = view;
    render(view);
  });
  session.reviewer = reviewerInput.value;
  reviewerInput.addEventListener('input', () => {
    session.reviewer = reviewerInput.value;
  });

  function render(view: SessionView): void {
    const violation = view.stats !== null && !view.conservationOk;
    if (view.error !== null || violation) {
      const parts: string[] = [];
      if (view.error !== null) {
        parts.push(view.error);
      }
      if (violation) {
        parts.push('stats do not add up: auto + pending + reviewed != total');
      }
      bannerText.textContent = parts.join(' — ');
      banner.hidden = false;
    } else {
      banner.hidden = true;
    }

    queueInfo.textContent =
      view.phase === 'loading'
        ? 'loading queue…'
        : `${view.pendingTotal} pending · ${view.sessionReviewed} reviewed this session`;

    for (const btn of [objectBtn, bogusBtn, skipBtn]) {
      btn.disabled = view.busy || view.current === null;
    }

    completion.hidden = view.phase !== 'done';
    viewer.hidden = view.phase === 'done' || view.phase === 'error';
    if (view.phase === 'done') {
      completion.textContent = `Queue complete — ${view.sessionReviewed} verdict(s) this session.`;
    }

    if (view.current !== null) {
      const c = view.current;
      itemMeta.textContent =
        `${c.id} · score ${fmt(c.score)} · combo ${c.combo.join(',')}` +
        ` · ${c.channels?.length ?? 0} channels`;
      renderChannelGrid(grid, c, mode);
    } else if (view.phase === 'reviewing') {
      itemMeta.textContent = view.busy ? 'waiting for the next item…' : '';
      grid.textContent = '';
    }

    if (view.stats !== null) {
      const s = view.stats;
      statsPane.innerHTML = '';
      const rows: [string, string][] = [
        ['total', String(s.total)],
        ['auto positive', String(s.auto_positive)],
        ['auto negative', String(s.auto_negative)],
        ['human pending', String(s.human_pending)],
        ['human reviewed', String(s.human_reviewed)],
        ['remaining ratio', fmt(s.remaining_ratio)],
        ['accept above', fmt(s.policy.positive_threshold)],
        ['reject below', fmt(s.policy.negative_threshold)],
        ['conservation', view.conservationOk ? 'ok' : 'VIOLATED'],
      ];
      const table = document.createElement('table');
      for (const [k, v] of rows) {
        const tr = document.createElement('tr');
        const th = document.createElement('th');
        th.textContent = k;
        const td = document.createElement('td');
        td.textContent = v;
        tr.appendChild(th);
        tr.appendChild(td);
        table.appendChild(tr);
      }
      statsPane.appendChild(table);
    }
  }

  function toggleContrast(): void {
    const next = STRETCH_MODES[(STRETCH_MODES.indexOf(mode) + 1) % STRETCH_MODES.length];
    mode = next;
    contrastBtn.textContent = `Contrast: ${mode === 'minmax' ? 'min-max' : '1–99%'} (c)`;
    if (lastView !== null) {
      render(lastView);
    }
  }

  objectBtn.addEventListener('click', () => void session.submit('object'));
  bogusBtn.addEventListener('click', () => void session.submit('false_positive'));
  skipBtn.addEventListener('click', () => void session.skip());
  contrastBtn.addEventListener('click', toggleContrast);
  retryBtn.addEventListener('click', () => {
    if (lastView?.phase === 'error') {
      void session.start();
    } else {
      void session.refresh();
    }
  });

  document.addEventListener('keydown', (ev) => {
    if (ev.target instanceof HTMLInputElement || ev.ctrlKey || ev.metaKey || ev.altKey) {
      return;
    }
    switch (ev.key) {
      case 'o':
        void session.submit('object');
        break;
      case 'f':
        void session.submit('false_positive');
        break;
      case 's':
        void session.skip();
        break;
      case 'c':
        toggleContrast();
        break;
    }
  });

  void session.start();
}

boot();
