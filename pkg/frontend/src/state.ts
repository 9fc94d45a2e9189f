// Console view state and its reducers. Every field is a copy of data
// the head-end API returned; reducers move payloads into the view and
// never derive new readings, energies or amounts.

import type {
  BillPayload,
  ConsoleEvent,
  MeterRow,
  MetersPayload,
  Reading,
  ReadOutcome,
} from "./types.js";

export const FEED_LIMIT = 500;

export type FeedStatus = "connecting" | "live" | "reconnecting" | "offline";

export interface ConsoleState {
  meters: MeterRow[];
  byAddress: Map<number, MeterRow>;
  totalMeters: number;
  selected: number | null;
  readPending: boolean;
  readOutcome: ReadOutcome | null;
  bill: BillPayload | null;
  billError: string | null;
  feed: ConsoleEvent[];
  lastSeq: number;
  gapCount: number;
  duplicateCount: number;
  feedStatus: FeedStatus;
  apiOnline: boolean;
  simTime: number | null;
}

export function initialState(): ConsoleState {
  return {
    meters: [],
    byAddress: new Map(),
    totalMeters: 0,
    selected: null,
    readPending: false,
    readOutcome: null,
    bill: null,
    billError: null,
    feed: [],
    lastSeq: 0,
    gapCount: 0,
    duplicateCount: 0,
    feedStatus: "connecting",
    apiOnline: false,
    simTime: null,
  };
}

export function applyMeters(state: ConsoleState, payload: MetersPayload): void {
  state.meters = payload.meters;
  state.totalMeters = payload.total;
  state.byAddress = new Map(payload.meters.map((m) => [m.address, m]));
  state.apiOnline = true;
}

export function markApiOffline(state: ConsoleState): void {
  // the table keeps its last server-provided rows, read-only
  state.apiOnline = false;
}

const TAMPER_BITS = 0x03;

function mergeReading(state: ConsoleState, reading: Reading): void {
  const row = state.byAddress.get(reading.address);
  if (row === undefined) return; // row not on this page of the table
  row.last_reading = reading;
  row.reachable = true;
  row.tamper = (reading.status_flags & TAMPER_BITS) !== 0;
}

export type ApplyResult = "applied" | "duplicate" | "applied-after-gap";

/** Fold one stream event into the view. Events must arrive in server
 * order; a seq at or below lastSeq is dropped as a duplicate and a
 * jump is counted as a gap (both are visible in the header). */
export function applyEvent(state: ConsoleState, ev: ConsoleEvent): ApplyResult {
  if (ev.seq <= state.lastSeq) {
    state.duplicateCount += 1;
    return "duplicate";
  }
  let result: ApplyResult = "applied";
  if (state.lastSeq > 0 && ev.seq > state.lastSeq + 1) {
    state.gapCount += 1;
    result = "applied-after-gap";
  }
  state.lastSeq = ev.seq;
  state.feed.push(ev);
  if (state.feed.length > FEED_LIMIT) {
    state.feed.splice(0, state.feed.length - FEED_LIMIT);
  }
  if (ev.type === "reading") {
    mergeReading(state, ev as unknown as Reading & ConsoleEvent);
  } else if (ev.type === "anomaly") {
    const addr = ev.address as number;
    const row = state.byAddress.get(addr);
    if (row !== undefined) {
      if (ev.kind === "TAMPER_FLAGGED") row.tamper = true;
      if (ev.kind === "UNREACHABLE") row.reachable = false;
    }
  }
  return result;
}

export function selectMeter(state: ConsoleState, address: number | null): void {
  state.selected = address;
  state.readOutcome = null;
  state.bill = null;
  state.billError = null;
}

export function setReadOutcome(state: ConsoleState, outcome: ReadOutcome): void {
  state.readPending = false;
  state.readOutcome = outcome;
  if (outcome.kind === "reading") {
    mergeReading(state, outcome.reading);
  } else if (outcome.kind === "unreachable" && state.selected !== null) {
    const row = state.byAddress.get(state.selected);
    if (row !== undefined) row.reachable = false;
  }
}

export function setBill(state: ConsoleState, bill: BillPayload): void {
  state.bill = bill;
  state.billError = null;
}

export function setBillError(state: ConsoleState, message: string): void {
  state.bill = null;
  state.billError = message;
}
