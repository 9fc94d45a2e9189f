// HTML renderers: pure functions from view state to markup strings,
// so they test without a DOM. Every number and amount shown is the
// server's own rendering (see state.ts) -- nothing is recomputed here.

import type { ConsoleState } from "./state.js";
import type { BillPayload, ConsoleEvent, MeterRow, Reading } from "./types.js";

export function esc(text: unknown): string {
  return String(text)
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderStatusBadge(state: ConsoleState): string {
  const label = state.apiOnline ? state.feedStatus : "offline";
  const extra =
    state.gapCount || state.duplicateCount
      ? ` <span class="feed-issues">gaps ${state.gapCount} dupes ${state.duplicateCount}</span>`
      : "";
  const sim = state.simTime !== null ? ` · sim t=${state.simTime.toFixed(3)}s` : "";
  return `<span class="badge badge-${esc(label)}">${esc(label)}</span>${extra}${sim}`;
}

export function renderOfflineBanner(state: ConsoleState): string {
  if (state.apiOnline) return "";
  return `<div class="banner-offline">head-end unreachable — showing last known data, read-only</div>`;
}

function reachabilityMark(row: MeterRow): string {
  if (row.reachable === null) return `<span class="reach reach-unknown">—</span>`;
  return row.reachable
    ? `<span class="reach reach-ok">ok</span>`
    : `<span class="reach reach-down">unreachable</span>`;
}

export function renderMeterTable(state: ConsoleState): string {
  if (state.meters.length === 0) {
    return `<p class="empty">no meters loaded</p>`;
  }
  const rows = state.meters
    .map((m) => {
      const r = m.last_reading;
      const selected = state.selected === m.address ? " row-selected" : "";
      const tamper = m.tamper ? ` <span class="tamper-badge">TAMPER</span>` : "";
      return `<tr class="meter-row${selected}" data-address="${m.address}">
<td class="mono">0x${esc(m.address_hex)}</td>
<td>${r ? esc(r.energy_kwh) + " kWh" : "<span class='empty'>never read</span>"}</td>
<td>${r ? `t=${esc(r.sim_time.toFixed(3))}` : ""}</td>
<td>${reachabilityMark(m)}${tamper}</td>
</tr>`;
    })
    .join("\n");
  const more =
    state.totalMeters > state.meters.length
      ? `<p class="empty">showing ${state.meters.length} of ${state.totalMeters} meters</p>`
      : "";
  return `<table class="meters">
<thead><tr><th>meter</th><th>last reading</th><th>read at</th><th>status</th></tr></thead>
<tbody>${rows}</tbody></table>${more}`;
}

function renderReading(r: Reading): string {
  return `<dl class="reading">
<dt>energy</dt><dd>${esc(r.energy_kwh)} kWh</dd>
<dt>register</dt><dd>${esc(r.register)} pulses (K=${esc(r.meter_constant_k)})</dd>
<dt>read at</dt><dd>sim t=${esc(r.sim_time)}</dd>
<dt>attempts</dt><dd>${esc(r.attempt_count)}</dd>
<dt>flags</dt><dd>0x${r.status_flags.toString(16).padStart(2, "0")}${
    (r.status_flags & 0x03) !== 0 ? ` <span class="tamper-badge">TAMPER</span>` : ""
  }</dd>
</dl>`;
}

export function renderDetail(state: ConsoleState): string {
  if (state.selected === null) {
    return `<p class="empty">select a meter</p>`;
  }
  const row = state.byAddress.get(state.selected);
  const title = `<h3 class="mono">meter 0x${esc(
    row ? row.address_hex : state.selected.toString(16).padStart(8, "0"),
  )}</h3>`;
  const button = `<button id="read-btn"${
    state.readPending || !state.apiOnline ? " disabled" : ""
  }>${state.readPending ? "reading…" : "Read now"}</button>`;
  let outcome = "";
  if (state.readOutcome !== null) {
    const o = state.readOutcome;
    if (o.kind === "reading") {
      outcome = renderReading(o.reading);
    } else if (o.kind === "unreachable") {
      outcome = `<p class="outcome-unreachable">UNREACHABLE after ${esc(o.attempts)} attempts</p>`;
    } else {
      outcome = `<p class="outcome-error">${esc(o.code)}: ${esc(o.message)}</p>`;
    }
  } else if (row?.last_reading) {
    outcome = renderReading(row.last_reading);
  }
  return `${title}${button}${outcome}`;
}

export function renderBill(state: ConsoleState): string {
  if (state.billError !== null) {
    return `<p class="bill-guidance">${esc(state.billError)}<br>
A bill needs a stored reading at or before each period boundary — trigger
reads (or run a sweep) first, then bill a period between them.</p>`;
  }
  const bill = state.bill;
  if (bill === null) return "";
  const lines = bill.lines
    .map(
      (ln) => `<tr>
<td>${ln.upper_kwh === null ? "remainder" : `up to ${esc(ln.upper_kwh)} kWh`}</td>
<td class="num">${esc(ln.kwh)}</td>
<td class="num">${esc(ln.rate)}</td>
<td class="num">${esc(ln.amount)}</td>
</tr>`,
    )
    .join("\n");
  return `<table class="bill">
<caption>meter ${esc(bill.address)} · sim period [${esc(bill.t_start)}, ${esc(bill.t_end)}]</caption>
<thead><tr><th>slab</th><th>kWh</th><th>rate</th><th>amount</th></tr></thead>
<tbody>${lines}</tbody>
<tfoot>
<tr><td colspan="3">consumption</td><td class="num">${esc(bill.consumption_kwh)} kWh</td></tr>
<tr><td colspan="3">fixed charge</td><td class="num">${esc(bill.fixed_charge)}</td></tr>
<tr class="bill-total"><td colspan="3">total</td><td class="num">${esc(bill.total)} ${esc(bill.currency)}</td></tr>
</tfoot></table>`;
}

function describeEvent(ev: ConsoleEvent): string {
  switch (ev.type) {
    case "reading":
      return `read 0x${Number(ev.address).toString(16).padStart(8, "0")} → ${esc(
        ev.energy_kwh,
      )} kWh`;
    case "anomaly":
      return `<span class="feed-anomaly">${esc(ev.kind)}</span> 0x${Number(ev.address)
        .toString(16)
        .padStart(8, "0")} ${esc(ev.detail ?? "")}`;
    case "sweep_started":
      return "sweep started";
    case "sweep_done":
      return `sweep done: ${esc(ev.read_count)}/${esc(ev.attempted)} read`;
    default:
      return esc(ev.type);
  }
}

export function renderFeed(state: ConsoleState, limit = 30): string {
  if (state.feed.length === 0) return `<p class="empty">no events yet</p>`;
  const items = state.feed
    .slice(-limit)
    .reverse()
    .map((ev) => `<li><span class="mono seq">#${ev.seq}</span> ${describeEvent(ev)}</li>`)
    .join("\n");
  return `<ul class="feed">${items}</ul>`;
}
