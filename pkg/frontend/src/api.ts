import type {
  BillPayload,
  AnomalyPayload,
  HealthPayload,
  MetersPayload,
  Reading,
  SweepReportPayload,
} from "./types.js";

export class ApiRequestError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
  }
}

async function request<T>(url: string, method: string, body?: unknown): Promise<T> {
  const res = await fetch(url, {
    method,
    headers: body === undefined ? undefined : { "Content-Type": "application/json" },
    body: body === undefined ? undefined : JSON.stringify(body),
  });
  const payload = await res.json().catch(() => null);
  if (!res.ok) {
    const err = payload?.error ?? {};
    throw new ApiRequestError(res.status, err.code ?? "HTTP_ERROR",
      err.message ?? `HTTP ${res.status}`);
  }
  return payload as T;
}

export class ApiClient {
  constructor(public base: string) {}

  health(): Promise<HealthPayload> {
    return request(`${this.base}/api/health`, "GET");
  }

  meters(limit = 1000, offset = 0): Promise<MetersPayload> {
    return request(`${this.base}/api/meters?limit=${limit}&offset=${offset}`, "GET");
  }

  read(address: number): Promise<
    { result: "ok"; reading: Reading } | { result: "unreachable"; address: number; attempts: number }
  > {
    return request(`${this.base}/api/meters/${address}/read`, "POST");
  }

  history(address: number, start?: number, end?: number): Promise<{ records: Reading[] }> {
    const q = new URLSearchParams();
    if (start !== undefined) q.set("start", String(start));
    if (end !== undefined) q.set("end", String(end));
    const suffix = q.size ? `?${q}` : "";
    return request(`${this.base}/api/meters/${address}/history${suffix}`, "GET");
  }

  anomalies(limit = 200): Promise<{ anomalies: AnomalyPayload[] }> {
    return request(`${this.base}/api/anomalies?limit=${limit}`, "GET");
  }

  bill(address: number, start: number, end: number): Promise<{ result: "ok"; bill: BillPayload }> {
    return request(`${this.base}/api/meters/${address}/bill`, "POST", { start, end });
  }

  bills(): Promise<{ bills: BillPayload[] }> {
    return request(`${this.base}/api/bills`, "GET");
  }

  sweep(wait: boolean): Promise<
    { result: "ok"; report: SweepReportPayload } | { result: "started"; meters: number }
  > {
    return request(`${this.base}/api/sweep`, "POST", { wait });
  }

  injectTamper(address: number): Promise<{ result: "ok" }> {
    return request(`${this.base}/api/meters/${address}/tamper`, "POST");
  }
}
