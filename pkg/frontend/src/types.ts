// Payloads exactly as the head-end API emits them (docs/api.md).
// Money and energy stay strings end to end: the console renders what
// the server computed and never does arithmetic of its own.

export interface Reading {
  address: number;
  register: number;
  meter_constant_k: number;
  sim_time: number;
  status_flags: number;
  attempt_count: number;
  energy_kwh: string;
}

export interface MeterRow {
  address: number;
  address_hex: string;
  meter_constant_k: number;
  last_reading: Reading | null;
  tamper: boolean;
  reachable: boolean | null;
}

export interface MetersPayload {
  meters: MeterRow[];
  total: number;
  offset: number;
}

export interface BillLine {
  upper_kwh: string | null;
  rate: string;
  kwh: string;
  amount: string;
}

export interface BillPayload {
  address: number;
  t_start: number;
  t_end: number;
  consumption_kwh: string;
  lines: BillLine[];
  fixed_charge: string;
  total: string;
  currency: string;
}

export interface AnomalyPayload {
  address: number;
  kind: string;
  detail: string;
  sim_time: number;
}

export interface SweepReportPayload {
  attempted: number;
  read_count: number;
  unreachable: number[];
  t_start: number;
  t_end: number;
  elapsed: number;
}

export interface HealthPayload {
  status: string;
  sim_time: number;
  meters: number;
  seed: number;
  link: string;
  records: number;
  last_event_seq: number;
}

// one entry on the /api/events stream; `type` discriminates and the
// remaining fields mirror the matching REST payload
export interface ConsoleEvent {
  seq: number;
  type: "reading" | "anomaly" | "sweep_started" | "sweep_done" | string;
  [field: string]: unknown;
}

export type ReadOutcome =
  | { kind: "reading"; reading: Reading }
  | { kind: "unreachable"; attempts: number }
  | { kind: "error"; code: string; message: string };
