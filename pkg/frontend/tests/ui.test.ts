import { describe, expect, it } from "vitest";

import {
  applyMeters,
  initialState,
  markApiOffline,
  selectMeter,
  setBill,
  setBillError,
  setReadOutcome,
} from "../src/state.js";
import {
  renderBill,
  renderDetail,
  renderFeed,
  renderMeterTable,
  renderOfflineBanner,
  renderStatusBadge,
} from "../src/ui.js";
import type { BillPayload, MeterRow, Reading } from "../src/types.js";

// Captured from the billing engine itself (fixture tariff, 150 kWh):
// the console must render these strings untouched.
const BILL_150_KWH: BillPayload = {
  address: 42, t_start: 0.0, t_end: 3600.0,
  consumption_kwh: "150.000",
  lines: [
    { upper_kwh: "75.000", rate: "3.00", kwh: "75.000", amount: "225.00" },
    { upper_kwh: "200.000", rate: "4.00", kwh: "75.000", amount: "300.00" },
    { upper_kwh: null, rate: "5.00", kwh: "0.000", amount: "0.00" },
  ],
  fixed_charge: "10.00", total: "535.00", currency: "BDT",
};

function meterRow(address: number, extra: Partial<MeterRow> = {}): MeterRow {
  return {
    address,
    address_hex: address.toString(16).padStart(8, "0"),
    meter_constant_k: 600,
    last_reading: null,
    tamper: false,
    reachable: null,
    ...extra,
  };
}

const READING: Reading = {
  address: 5, register: 1500, meter_constant_k: 600, sim_time: 12.25,
  status_flags: 0, attempt_count: 2, energy_kwh: "2.500",
};

describe("meter table", () => {
  it("renders one row per meter from the payload", () => {
    const s = initialState();
    applyMeters(s, {
      meters: [meterRow(1), meterRow(2), meterRow(3)],
      total: 3, offset: 0,
    });
    const html = renderMeterTable(s);
    expect(html.match(/class="meter-row/g)).toHaveLength(3);
    expect(html).toContain("0x00000002");
  });

  it("marks tamper-flagged meters", () => {
    const s = initialState();
    applyMeters(s, { meters: [meterRow(1, { tamper: true })], total: 1, offset: 0 });
    expect(renderMeterTable(s)).toContain("TAMPER");
  });

  it("shows the server's energy string verbatim", () => {
    const s = initialState();
    applyMeters(s, {
      meters: [meterRow(5, { last_reading: READING })], total: 1, offset: 0,
    });
    expect(renderMeterTable(s)).toContain("2.500 kWh");
  });

  it("distinguishes never-read, reachable and unreachable", () => {
    const s = initialState();
    applyMeters(s, {
      meters: [
        meterRow(1),
        meterRow(2, { reachable: true, last_reading: READING }),
        meterRow(3, { reachable: false }),
      ],
      total: 3, offset: 0,
    });
    const html = renderMeterTable(s);
    expect(html).toContain("never read");
    expect(html).toContain("reach-ok");
    expect(html).toContain("unreachable");
  });
});

describe("offline handling", () => {
  it("banner appears only when the API is down; table is preserved", () => {
    const s = initialState();
    applyMeters(s, { meters: [meterRow(1)], total: 1, offset: 0 });
    expect(renderOfflineBanner(s)).toBe("");
    markApiOffline(s);
    expect(renderOfflineBanner(s)).toContain("unreachable");
    expect(renderMeterTable(s)).toContain("meter-row"); // still rendered
    expect(renderStatusBadge(s)).toContain("offline");
  });

  it("read button is disabled offline", () => {
    const s = initialState();
    applyMeters(s, { meters: [meterRow(1)], total: 1, offset: 0 });
    selectMeter(s, 1);
    markApiOffline(s);
    expect(renderDetail(s)).toContain("disabled");
  });
});

describe("meter detail", () => {
  it("shows a fresh reading after a triggered read", () => {
    const s = initialState();
    applyMeters(s, { meters: [meterRow(5)], total: 1, offset: 0 });
    selectMeter(s, 5);
    setReadOutcome(s, { kind: "reading", reading: READING });
    const html = renderDetail(s);
    expect(html).toContain("2.500");
    expect(html).toContain("1500 pulses");
    expect(html).toContain("attempts");
  });

  it("shows UNREACHABLE distinctly", () => {
    const s = initialState();
    applyMeters(s, { meters: [meterRow(5)], total: 1, offset: 0 });
    selectMeter(s, 5);
    setReadOutcome(s, { kind: "unreachable", attempts: 4 });
    expect(renderDetail(s)).toContain("UNREACHABLE after 4 attempts");
  });

  it("surfaces NOT_REGISTERED verbatim", () => {
    const s = initialState();
    selectMeter(s, 999);
    setReadOutcome(s, {
      kind: "error", code: "NOT_REGISTERED",
      message: "meter 0x000003e7 is not registered",
    });
    const html = renderDetail(s);
    expect(html).toContain("NOT_REGISTERED");
    expect(html).toContain("meter 0x000003e7 is not registered");
  });
});

describe("bill view", () => {
  it("renders the 150 kWh fixture bill exactly as the API computed it", () => {
    const s = initialState();
    setBill(s, BILL_150_KWH);
    const html = renderBill(s);
    expect(html).toContain("535.00 BDT");
    expect(html).toContain("225.00");
    expect(html).toContain("300.00");
    expect(html).toContain("150.000");
    expect(html).toContain("10.00");
    expect(html).toContain("remainder");
  });

  it("zero consumption renders the fixed charge only", () => {
    const s = initialState();
    setBill(s, {
      ...BILL_150_KWH,
      consumption_kwh: "0.000",
      lines: BILL_150_KWH.lines.map((ln) => ({ ...ln, kwh: "0.000", amount: "0.00" })),
      total: "10.00",
    });
    const html = renderBill(s);
    expect(html).toContain("10.00 BDT");
    expect(html).not.toContain("535.00");
  });

  it("missing baseline renders guidance text", () => {
    const s = initialState();
    setBillError(s, "NO_BASELINE: no reading at or before start boundary t=0");
    const html = renderBill(s);
    expect(html).toContain("NO_BASELINE");
    expect(html).toContain("trigger");
  });
});

describe("live feed", () => {
  it("renders events newest first with their seq", () => {
    const s = initialState();
    s.feed = [
      { seq: 1, type: "sweep_started", sim_time: 0 },
      { seq: 2, type: "reading", address: 1, energy_kwh: "1.000" },
      { seq: 3, type: "sweep_done", read_count: 1, attempted: 1 },
    ];
    const html = renderFeed(s);
    expect(html.indexOf("#3")).toBeLessThan(html.indexOf("#2"));
    expect(html).toContain("sweep done: 1/1 read");
  });

  it("marks anomalies", () => {
    const s = initialState();
    s.feed = [{
      seq: 9, type: "anomaly", kind: "TAMPER_FLAGGED",
      address: 7, detail: "flags 0x02", sim_time: 2,
    }];
    expect(renderFeed(s)).toContain("feed-anomaly");
  });

  it("escapes server strings", () => {
    const s = initialState();
    s.feed = [{
      seq: 1, type: "anomaly", kind: "<script>",
      address: 1, detail: "<img>", sim_time: 0,
    }];
    const html = renderFeed(s);
    expect(html).not.toContain("<script>");
    expect(html).toContain("&lt;script&gt;");
  });
});
