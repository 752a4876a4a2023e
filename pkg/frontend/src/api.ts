// JSON client for the infusion server. Every authenticated response carries
// the next single-use token; requests are serialized through one queue so
// the chain never forks.

export interface Physician {
  first_name: string;
  last_name: string;
  institute: string;
}

export interface Prescription {
  prescription_id: string;
  version: number;
  volume_ml: number;
  rate_ml_h: number;
}

export interface Proposal {
  proposal_id: string;
  patient_id: string;
  volume_ml: number;
  rate_ml_h: number;
  state: string;
  decided_by?: string;
  reason?: string;
}

export interface Progress {
  delivered_volume_ml: number;
  elapsed_s: number;
  version: number;
  updated_at: number;
}

export interface Limits {
  max_volume_ml: number;
  max_rate_ml_h: number;
}

export interface PatientStatus {
  patient_id: string;
  limits: Limits;
  active_prescription: Prescription | null;
  pending_proposals: Proposal[];
  progress: Progress | null;
}

export interface InfusionRecord {
  record_id: string;
  patient_id: string;
  prescription_id: string;
  version: number;
  started_at: number;
  finished_at: number;
  delivered_volume_ml: number;
  mean_rate_ml_h: number;
  outcome: string;
}

export interface DecisionResponse {
  proposal: Proposal;
  prescription?: Prescription;
}

export interface LimitsResponse {
  patient_id: string;
  max_volume_ml: number;
  max_rate_ml_h: number;
  warning?: string;
}

export interface HealthResponse {
  status: string;
  poll_interval_s: number;
}

export class ApiError extends Error {
  constructor(readonly status: number, readonly code: string) {
    super(status + " " + code);
    this.name = "ApiError";
  }
}

export class ApiClient {
  private token: string | null = null;
  private queue: Promise<unknown> = Promise.resolve();

  constructor(private readonly baseUrl: string = "") {}

  get authenticated(): boolean {
    return this.token !== null;
  }

  logout(): void {
    this.token = null;
  }

  async login(username: string, password: string): Promise<Physician> {
    const payload = await this.call<Physician & { token: string }>(
      "POST", "/api/login", { username, password });
    return {
      first_name: payload.first_name,
      last_name: payload.last_name,
      institute: payload.institute,
    };
  }

  status(patientId: string): Promise<PatientStatus> {
    return this.call<{ status: PatientStatus }>(
      "GET", `/api/patients/${encodeURIComponent(patientId)}/status`,
    ).then((payload) => payload.status);
  }

  history(patientId: string): Promise<InfusionRecord[]> {
    return this.call<{ history: InfusionRecord[] }>(
      "GET", `/api/patients/${encodeURIComponent(patientId)}/history`,
    ).then((payload) => payload.history);
  }

  setLimits(patientId: string, maxVolumeMl: number, maxRateMlH: number): Promise<LimitsResponse> {
    return this.call<LimitsResponse>(
      "POST", `/api/patients/${encodeURIComponent(patientId)}/limits`,
      { max_volume_ml: maxVolumeMl, max_rate_ml_h: maxRateMlH });
  }

  decide(proposalId: string, decision: "approve" | "reject"): Promise<DecisionResponse> {
    return this.call<DecisionResponse>(
      "POST", `/api/proposals/${encodeURIComponent(proposalId)}/decision`,
      { decision });
  }

  health(): Promise<HealthResponse> {
    return this.call<HealthResponse>("GET", "/api/health");
  }

  private call<T>(method: string, path: string, body?: unknown): Promise<T> {
    const run = () => this.exchange<T>(method, path, body);
    const next = this.queue.then(run, run);
    // a failed call must not jam the queue for the next one
    this.queue = next.then(
      () => undefined,
      () => undefined,
    );
    return next;
  }

  private async exchange<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) {
      headers["Content-Type"] = "application/json";
    }
    const hadToken = this.token !== null;
    if (this.token !== null) {
      headers["Authorization"] = "Bearer " + this.token;
    }
    // a network failure leaves this.token alone: the server never saw it
    const response = await fetch(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = (await response.json()) as Record<string, unknown>;
    if (typeof payload.token === "string") {
      this.token = payload.token;
    } else if (hadToken) {
      // the server consumed our token and issued no replacement
      this.token = null;
    }
    if (!response.ok) {
      throw new ApiError(response.status, String(payload.error ?? "unknown_error"));
    }
    return payload as T;
  }
}
