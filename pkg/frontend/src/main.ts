// Wire the console: poll the meter table, subscribe to the event
// stream, route clicks. The API base comes from ?api= (defaults to the
// page origin, falling back to the local head-end port).

import { ApiClient, ApiRequestError } from "./api.js";
import { EventFeed } from "./feed.js";
import {
  applyEvent,
  applyMeters,
  initialState,
  markApiOffline,
  selectMeter,
  setBill,
  setBillError,
  setReadOutcome,
} from "./state.js";
import {
  renderBill,
  renderDetail,
  renderFeed,
  renderMeterTable,
  renderOfflineBanner,
  renderStatusBadge,
} from "./ui.js";

const TABLE_REFRESH_MS = 3000;

function apiBase(): string {
  const param = new URLSearchParams(window.location.search).get("api");
  if (param) return param.replace(/\/$/, "");
  if (window.location.protocol.startsWith("http")) return window.location.origin;
  return "http://127.0.0.1:8800";
}

const state = initialState();
const api = new ApiClient(apiBase());

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node;
}

function render(): void {
  el("status").innerHTML = renderStatusBadge(state);
  el("banner").innerHTML = renderOfflineBanner(state);
  el("meters").innerHTML = renderMeterTable(state);
  el("detail").innerHTML = renderDetail(state);
  el("bill").innerHTML = renderBill(state);
  el("feed").innerHTML = renderFeed(state);
  const billForm = el("bill-form") as HTMLFieldSetElement;
  billForm.disabled = state.selected === null || !state.apiOnline;
}

async function refreshMeters(): Promise<void> {
  try {
    const [meters, health] = await Promise.all([api.meters(), api.health()]);
    applyMeters(state, meters);
    state.simTime = health.sim_time;
  } catch {
    markApiOffline(state);
  }
  render();
}

async function triggerRead(): Promise<void> {
  if (state.selected === null || state.readPending) return;
  state.readPending = true;
  render();
  try {
    const res = await api.read(state.selected);
    if (res.result === "ok") {
      setReadOutcome(state, { kind: "reading", reading: res.reading });
    } else {
      setReadOutcome(state, { kind: "unreachable", attempts: res.attempts });
    }
  } catch (e) {
    if (e instanceof ApiRequestError) {
      setReadOutcome(state, { kind: "error", code: e.code, message: e.message });
    } else {
      markApiOffline(state);
      state.readPending = false;
    }
  }
  render();
}

async function requestBill(): Promise<void> {
  if (state.selected === null) return;
  const start = Number((el("bill-start") as HTMLInputElement).value);
  const end = Number((el("bill-end") as HTMLInputElement).value);
  try {
    const res = await api.bill(state.selected, start, end);
    setBill(state, res.bill);
  } catch (e) {
    if (e instanceof ApiRequestError) {
      setBillError(state, `${e.code}: ${e.message}`);
    } else {
      markApiOffline(state);
    }
  }
  render();
}

const feed = new EventFeed(api.base, {
  onEvent: (ev) => {
    applyEvent(state, ev);
    render();
  },
  onStatus: (status) => {
    state.feedStatus = status;
    render();
  },
  resumeSeq: () => state.lastSeq,
});

el("meters").addEventListener("click", (e) => {
  const row = (e.target as HTMLElement).closest<HTMLElement>(".meter-row");
  if (row?.dataset.address !== undefined) {
    selectMeter(state, Number(row.dataset.address));
    render();
  }
});
el("detail").addEventListener("click", (e) => {
  if ((e.target as HTMLElement).id === "read-btn") void triggerRead();
});
el("bill-go").addEventListener("click", () => void requestBill());
el("sweep-btn").addEventListener("click", () => {
  void api.sweep(false).catch(() => markApiOffline(state));
});

feed.start();
void refreshMeters();
setInterval(() => void refreshMeters(), TABLE_REFRESH_MS);
